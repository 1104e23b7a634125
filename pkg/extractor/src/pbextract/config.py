"""Extractor configuration."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class ExtractorConfig:
    """Backbone and preprocessing knobs.

    Defaults follow the common industrial-inspection recipe: a wide
    50-layer residual network pretrained on a large natural-image corpus,
    features taken from the second and third residual stages, 256 resize
    with 224 center crop (512/512 for high-resolution datasets).
    """

    backbone: str = "wide_resnet50_2"
    layers: list[str] = field(default_factory=lambda: ["layer2", "layer3"])
    resize: int = 256
    crop: int = 224
    neighborhood: int = 3  # local average pooling window per patch
    pretrained: bool = True
    seed: int = 0
    batch_size: int = 4
    device: str = "cpu"
    limit: int | None = None  # per split/class image cap, for fixtures

    def validate(self) -> None:
        if self.crop > self.resize:
            raise ValueError(f"crop {self.crop} exceeds resize {self.resize}")
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ValueError("neighborhood must be a positive odd window size")
        if not self.layers:
            raise ValueError("need at least one backbone layer")
        if self.limit is not None and self.limit < 1:
            raise ValueError("limit must be positive")
