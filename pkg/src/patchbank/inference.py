"""Scoring test feature maps against a memory bank.

Each test patch is matched to its exact nearest bank entry; the stored soft
weight multiplies that distance (a suspicious bank entry therefore inflates
the score of any test patch matching it).  The image score is the plain
maximum over weighted patch scores, computed before any map smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .coreset import MemoryBank
from .errors import InputError
from .featureio import FeatureMap

# bank rows per distance block; row-chunking never changes a distance value
_BANK_BLOCK = 8192


@dataclass
class AnomalyResult:
    image_id: str
    image_score: float
    patch_scores: np.ndarray  # (h, w) f64
    pixel_map: np.ndarray | None = None  # (H, W) f64 once rendered


def _nearest_in_bank(entries: np.ndarray, patch: np.ndarray) -> tuple[int, float]:
    """Exact linear scan; ties resolved toward the lowest bank index."""
    best_idx = 0
    best_dist = np.inf
    for start in range(0, entries.shape[0], _BANK_BLOCK):
        block = entries[start : start + _BANK_BLOCK]
        diff = block - patch
        dist = np.sqrt((diff * diff).sum(axis=1))
        local = int(np.argmin(dist))
        if dist[local] < best_dist:
            best_idx = start + local
            best_dist = float(dist[local])
    return best_idx, best_dist


def query_nearest(bank: MemoryBank, patch: np.ndarray) -> tuple[int, float]:
    """Index and L2 distance of the nearest bank entry to one patch vector."""
    patch = np.asarray(patch, dtype=np.float64).reshape(-1)
    if patch.shape[0] != bank.channels:
        raise InputError(
            f"dimension mismatch: patch has {patch.shape[0]} channels, bank has {bank.channels}"
        )
    return _nearest_in_bank(bank.entries.astype(np.float64), patch)


def score_patch(bank: MemoryBank, patch: np.ndarray) -> float:
    """Soft-weighted nearest-neighbor distance of one patch."""
    idx, dist = query_nearest(bank, patch)
    return float(bank.soft_weights[idx] * dist)


def score_image(bank: MemoryBank, fmap: FeatureMap) -> AnomalyResult:
    """Weighted nearest-neighbor score for every patch; image score is the max.

    No neighborhood re-weighting is applied to the maximal patch; the soft
    weights stored in the bank replace that mechanism.
    """
    if fmap.channels != bank.channels:
        raise InputError(
            f"dimension mismatch: features have {fmap.channels} channels, bank has {bank.channels}"
        )
    h, w = fmap.height, fmap.width
    patches = fmap.data.reshape(h * w, fmap.channels).astype(np.float64)
    entries = bank.entries.astype(np.float64)
    scores = np.empty(h * w, dtype=np.float64)
    for i in range(h * w):
        idx, dist = _nearest_in_bank(entries, patches[i])
        scores[i] = bank.soft_weights[idx] * dist
    patch_scores = scores.reshape(h, w)
    return AnomalyResult(fmap.image_id, float(patch_scores.max()), patch_scores)


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-aligned bilinear upsampling of a 2-d score grid."""
    in_h, in_w = grid.shape
    grid = np.asarray(grid, dtype=np.float64)

    def axis_coords(out_n: int, in_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
        src = np.clip(src, 0.0, in_n - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, in_n - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(out_h, in_h)
    x0, x1, fx = axis_coords(out_w, in_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = grid[np.ix_(y0, x0)] * (1.0 - fx) + grid[np.ix_(y0, x1)] * fx
    bottom = grid[np.ix_(y1, x0)] * (1.0 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy


def anomaly_map(result: AnomalyResult, out_h: int, out_w: int, sigma: float = 4.0) -> AnomalyResult:
    """Render the pixel-level map: bilinear upsample then Gaussian smoothing.

    The kernel is truncated at four standard deviations with replicated
    edges; sigma = 0 yields the pure bilinear upsample.  The image score is
    untouched, it was final before smoothing.
    """
    h, w = result.patch_scores.shape
    if out_h < h or out_w < w:
        raise InputError(f"target size {(out_h, out_w)} below patch grid {(h, w)}")
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    pixel = bilinear_resize(result.patch_scores, out_h, out_w)
    if sigma > 0:
        pixel = gaussian_filter(pixel, sigma=sigma, mode="nearest", truncate=4.0)
    return AnomalyResult(result.image_id, result.image_score, result.patch_scores, pixel)


__all__ = [
    "AnomalyResult",
    "query_nearest",
    "score_patch",
    "score_image",
    "bilinear_resize",
    "anomaly_map",
]
