"""Frozen-backbone patch feature computation.

A forward pass collects the configured residual-stage outputs via hooks,
averages each cell over its local neighborhood, upsamples the deeper maps
to the shallowest stage's spatial size and concatenates channels.  Nothing
is ever trained here; the model runs in eval mode under no_grad.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
import torchvision
from PIL import Image

from .config import ExtractorConfig

# standard natural-image statistics
_MEAN = [0.485, 0.456, 0.406]
_STD = [0.229, 0.224, 0.225]


class PatchFeatureExtractor:
    def __init__(self, config: ExtractorConfig):
        config.validate()
        self.config = config
        torch.manual_seed(config.seed)
        builder = getattr(torchvision.models, config.backbone, None)
        if builder is None:
            raise ValueError(f"unknown backbone '{config.backbone}'")
        if config.pretrained:
            try:
                model = builder(weights="IMAGENET1K_V1")
            except Exception as exc:  # weight download unavailable
                raise RuntimeError(
                    f"cannot load pretrained weights for {config.backbone}: {exc}; "
                    "pass --random-weights for a seeded untrained backbone"
                ) from exc
        else:
            model = builder(weights=None)
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model.to(config.device)

        self._captured: dict[str, torch.Tensor] = {}
        for name in config.layers:
            module = getattr(self.model, name, None)
            if module is None:
                raise ValueError(f"backbone has no layer '{name}'")
            module.register_forward_hook(self._capture(name))

    def _capture(self, name: str):
        def hook(_module, _inputs, output):
            self._captured[name] = output

        return hook

    def preprocess(self, image: Image.Image) -> torch.Tensor:
        cfg = self.config
        image = image.convert("RGB").resize((cfg.resize, cfg.resize), Image.BILINEAR)
        left = (cfg.resize - cfg.crop) // 2
        image = image.crop((left, left, left + cfg.crop, left + cfg.crop))
        arr = np.asarray(image, dtype=np.float32) / 255.0
        arr = (arr - np.array(_MEAN, dtype=np.float32)) / np.array(_STD, dtype=np.float32)
        return torch.from_numpy(arr.transpose(2, 0, 1))

    def preprocess_mask(self, mask: Image.Image) -> np.ndarray:
        """Same geometry as preprocess, nearest resampling, boolean output."""
        cfg = self.config
        mask = mask.convert("L").resize((cfg.resize, cfg.resize), Image.NEAREST)
        left = (cfg.resize - cfg.crop) // 2
        mask = mask.crop((left, left, left + cfg.crop, left + cfg.crop))
        return np.asarray(mask) > 0

    @torch.no_grad()
    def features(self, batch: torch.Tensor) -> np.ndarray:
        """Aggregated patch features for a (b, 3, crop, crop) batch.

        Returns (b, h*, w*, c*) float32, where (h*, w*) is the shallowest
        configured stage's grid and c* the concatenated channel count.
        """
        cfg = self.config
        self._captured.clear()
        self.model(batch.to(cfg.device))
        stages = [self._captured[name] for name in cfg.layers]
        pad = cfg.neighborhood // 2
        pooled = [
            F.avg_pool2d(s, kernel_size=cfg.neighborhood, stride=1, padding=pad,
                         count_include_pad=False)
            for s in stages
        ]
        target = pooled[0].shape[-2:]
        aligned = [
            p if p.shape[-2:] == target
            else F.interpolate(p, size=target, mode="bilinear", align_corners=False)
            for p in pooled
        ]
        merged = torch.cat(aligned, dim=1)  # (b, c*, h*, w*)
        return merged.permute(0, 2, 3, 1).contiguous().cpu().numpy().astype(np.float32)
