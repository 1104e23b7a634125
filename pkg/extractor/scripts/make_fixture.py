"""Regenerates the committed miniature dataset under tests/fixtures/.

Ten 128x128 images in the usual category layout: seven normal training
textures, one normal test image, two defect test images with ground-truth
masks.  Fully seeded so the fixture is reproducible byte-for-byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

SIZE = 128
ROOT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "mini_widget"


def texture(seed: int) -> np.ndarray:
    """Smooth banded texture with mild per-image variation."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    freq_a, freq_b = rng.uniform(0.05, 0.12, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    base = 0.5 + 0.2 * np.sin(freq_a * x + phase[0]) + 0.2 * np.cos(freq_b * y + phase[1])
    noise = rng.normal(scale=0.03, size=(SIZE, SIZE))
    channels = [
        np.clip(base * scale + noise, 0.0, 1.0) for scale in (1.0, 0.9, 0.8)
    ]
    return (np.stack(channels, axis=2) * 255).astype(np.uint8)


def add_defect(img: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    top, left = rng.integers(24, SIZE - 56, size=2)
    h, w = rng.integers(20, 36, size=2)
    out = img.copy()
    out[top : top + h, left : left + w] = rng.integers(200, 255, size=3)
    mask = np.zeros((SIZE, SIZE), dtype=np.uint8)
    mask[top : top + h, left : left + w] = 255
    return out, mask


def save(arr: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def main() -> None:
    for i in range(7):
        save(texture(100 + i), ROOT / "train" / "good" / f"{i:03d}.png")
    save(texture(200), ROOT / "test" / "good" / "000.png")
    for i in range(2):
        img, mask = add_defect(texture(300 + i), 400 + i)
        save(img, ROOT / "test" / "scratch" / f"{i:03d}.png")
        save(mask, ROOT / "ground_truth" / "scratch" / f"{i:03d}_mask.png")
    print(f"fixture written under {ROOT}")


if __name__ == "__main__":
    main()
