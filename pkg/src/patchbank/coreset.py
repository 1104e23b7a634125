"""Patch denoising, coreset subsampling and memory bank construction.

The training patches of a whole dataset are flattened into one pool, the
top-tau fraction by outlier score is removed at a single global quantile,
the survivors' scores become soft weights, and a greedy (farthest-point)
or random subsample of the pool forms the immutable memory bank.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discriminators import ScoreTensor
from .errors import FormatError, InfeasibleError, InputError
from .featureio import FeatureDataset

SPB1_MAGIC = b"SPB1\x00"
BANK_VERSION = 1

SAMPLERS = ("greedy", "random")


@dataclass
class DenoiseConfig:
    tau: float = 0.15
    sampler: str = "greedy"
    sampling_ratio: float = 0.10
    projection_dim: int | None = 128
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.tau < 1.0:
            raise InputError(f"tau must be in [0, 1), got {self.tau}")
        if self.sampler not in SAMPLERS:
            raise InputError(f"unknown sampler '{self.sampler}'")
        if not 0.0 < self.sampling_ratio <= 1.0:
            raise InputError(f"sampling_ratio must be in (0, 1], got {self.sampling_ratio}")
        if self.projection_dim is not None and self.projection_dim < 1:
            raise InputError("projection_dim must be positive")


@dataclass
class PatchPool:
    """Flattened retained patches with raw or normalized weights."""

    vectors: np.ndarray  # (m, c) f32
    weights: np.ndarray  # (m,) f64
    provenance: np.ndarray  # (m, 3) u32 rows of (image_index, h, w)

    def __len__(self) -> int:
        return int(self.vectors.shape[0])


@dataclass
class MemoryBank:
    entries: np.ndarray  # (k, c) f32
    soft_weights: np.ndarray  # (k,) f64
    provenance: np.ndarray  # (k, 3) u32
    config_fingerprint: bytes

    def __len__(self) -> int:
        return int(self.entries.shape[0])

    @property
    def channels(self) -> int:
        return int(self.entries.shape[1])

    def validate(self) -> None:
        if len(self) < 1:
            raise InputError("empty memory bank")
        if not np.isfinite(self.entries).all():
            raise InputError("non-finite bank entry")
        if not (np.isfinite(self.soft_weights).all() and (self.soft_weights > 0).all()):
            raise InputError("soft weights must be finite and positive")
        if len(self.config_fingerprint) != 32:
            raise InputError("config fingerprint must be 32 bytes")


def flatten_patches(dataset: FeatureDataset) -> tuple[np.ndarray, np.ndarray]:
    """All patches as (n*h*w, c) rows plus (image_index, h, w) provenance."""
    n, c, h, w = dataset.shape
    vectors = dataset.array.reshape(n * h * w, c)
    idx_n, idx_h, idx_w = np.meshgrid(
        np.arange(n, dtype=np.uint32),
        np.arange(h, dtype=np.uint32),
        np.arange(w, dtype=np.uint32),
        indexing="ij",
    )
    provenance = np.stack([idx_n.ravel(), idx_h.ravel(), idx_w.ravel()], axis=1)
    return vectors, provenance


def threshold_filter(dataset: FeatureDataset, scores: ScoreTensor, tau: float) -> PatchPool:
    """Drop the patches strictly above the global (1-tau) score quantile.

    The cut is one quantile over all positions; with distinct scores exactly
    floor(tau * total) patches are removed, ties at the threshold are kept.
    """
    if not 0.0 <= tau < 1.0:
        raise InputError(f"tau must be in [0, 1), got {tau}")
    n, _, h, w = dataset.shape
    if scores.scores.shape != (n, h, w):
        raise InputError(
            f"score shape {scores.scores.shape} does not match dataset {(n, h, w)}"
        )
    vectors, provenance = flatten_patches(dataset)
    flat = scores.scores.reshape(-1)
    total = flat.size
    drop = math.floor(tau * total)
    if drop == 0:
        keep = np.ones(total, dtype=bool)
    else:
        cutoff = np.partition(flat, total - drop - 1)[total - drop - 1]
        keep = flat <= cutoff
    if not keep.any():
        raise InfeasibleError("threshold removed every patch")
    return PatchPool(vectors[keep], flat[keep].astype(np.float64), provenance[keep])


def normalize_weights(pool: PatchPool, method: str) -> PatchPool:
    """Make the retained scores usable as multiplicative soft weights.

    LOF scores are naturally centered at 1 and pass through unchanged;
    nearest/gaussian scores are mean-normalized over the retained pool so a
    typical inlier weighs about 1.  Zero raw scores (duplicates) are lifted
    to the smallest positive weight first so every output stays positive.
    """
    if len(pool) == 0:
        raise InputError("empty patch pool")
    if method in ("lof", "none"):
        return pool
    weights = pool.weights.copy()
    zero = weights <= 0.0
    if zero.any():
        positive = weights[~zero]
        weights[zero] = positive.min() if positive.size else 1.0
    weights /= weights.mean()
    return PatchPool(pool.vectors, weights, pool.provenance)


def project(vectors: np.ndarray, dim: int, seed: int) -> np.ndarray:
    """Seeded Gaussian random projection to `dim`, scaled by 1/sqrt(dim)."""
    c = vectors.shape[1]
    if dim > c:
        raise InputError(f"projection dim {dim} exceeds feature dim {c}")
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((c, dim)) / math.sqrt(dim)
    return np.asarray(vectors, dtype=np.float64) @ matrix


def _distances_to(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = points - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def greedy_select(
    pool: PatchPool,
    ratio: float,
    projection_dim: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Farthest-point (k-center) greedy selection of ceil(ratio * m) indices.

    Starts deterministically from index 0 and repeatedly adds the candidate
    maximizing its minimum distance to the selected set, ties by lowest
    index.  Distances are measured in projected space when projection_dim
    is set; the returned indices always refer to the full-dimension pool.
    """
    if not 0.0 < ratio <= 1.0:
        raise InputError(f"ratio must be in (0, 1], got {ratio}")
    m = len(pool)
    if m == 0:
        raise InputError("empty patch pool")
    feats = pool.vectors.astype(np.float64)
    if projection_dim is not None:
        feats = project(feats, projection_dim, seed)
    k = min(m, math.ceil(ratio * m))
    selected = np.empty(k, dtype=np.int64)
    selected[0] = 0
    min_dist = _distances_to(feats, feats[0])
    min_dist[0] = -np.inf
    for step in range(1, k):
        pick = int(np.argmax(min_dist))
        selected[step] = pick
        np.minimum(min_dist, _distances_to(feats, feats[pick]), out=min_dist)
        min_dist[pick] = -np.inf
    return selected


def random_select(pool: PatchPool, ratio: float, seed: int = 0) -> np.ndarray:
    """Seeded uniform subsample without replacement, ceil(ratio * m) indices."""
    if not 0.0 < ratio <= 1.0:
        raise InputError(f"ratio must be in (0, 1], got {ratio}")
    m = len(pool)
    if m == 0:
        raise InputError("empty patch pool")
    k = min(m, math.ceil(ratio * m))
    rng = np.random.default_rng(seed)
    return rng.choice(m, size=k, replace=False)


def config_fingerprint(payload: dict) -> bytes:
    """SHA-256 over the canonical JSON of every config knob and seed."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def build_bank(
    dataset: FeatureDataset,
    scores: ScoreTensor,
    config: DenoiseConfig,
    method: str,
    fingerprint_payload: dict | None = None,
) -> MemoryBank:
    """threshold_filter -> normalize_weights -> subsample -> assemble bank.

    The projection (when configured) only steers greedy selection distances;
    the bank always stores full-dimension vectors.  A projection_dim at or
    above the feature dimension is ignored rather than rejected.
    """
    config.validate()
    pool = threshold_filter(dataset, scores, config.tau)
    pool = normalize_weights(pool, method)
    proj = config.projection_dim
    if proj is not None and proj >= pool.vectors.shape[1]:
        proj = None
    if config.sampler == "greedy":
        indices = greedy_select(pool, config.sampling_ratio, proj, config.seed)
    else:
        indices = random_select(pool, config.sampling_ratio, config.seed)
    payload = dict(fingerprint_payload or {})
    payload.update(
        method=method,
        tau=config.tau,
        sampler=config.sampler,
        sampling_ratio=config.sampling_ratio,
        projection_dim=config.projection_dim,
        seed=config.seed,
    )
    bank = MemoryBank(
        entries=np.ascontiguousarray(pool.vectors[indices]),
        soft_weights=np.ascontiguousarray(pool.weights[indices]),
        provenance=np.ascontiguousarray(pool.provenance[indices]),
        config_fingerprint=config_fingerprint(payload),
    )
    bank.validate()
    return bank


# ---------------------------------------------------------------------------
# SPB1 bank files
# ---------------------------------------------------------------------------

_BANK_HEADER = struct.Struct("<III")  # version, k, c


def save_bank(bank: MemoryBank, path: str | Path) -> None:
    bank.validate()
    k, c = bank.entries.shape
    with open(path, "wb") as fh:
        fh.write(SPB1_MAGIC)
        fh.write(_BANK_HEADER.pack(BANK_VERSION, k, c))
        fh.write(np.ascontiguousarray(bank.entries, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(bank.soft_weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bank.provenance, dtype="<u4").tobytes())
        fh.write(bank.config_fingerprint)


def load_bank(path: str | Path) -> MemoryBank:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing bank file: {path}")
    blob = path.read_bytes()
    if len(blob) < len(SPB1_MAGIC) + _BANK_HEADER.size:
        raise FormatError(f"truncated header in {path}")
    if blob[: len(SPB1_MAGIC)] != SPB1_MAGIC:
        raise FormatError(f"bad magic in {path}")
    version, k, c = _BANK_HEADER.unpack_from(blob, len(SPB1_MAGIC))
    if version != BANK_VERSION:
        raise FormatError(f"unsupported bank version {version} in {path}")
    offset = len(SPB1_MAGIC) + _BANK_HEADER.size
    expected = offset + k * c * 4 + k * 8 + k * 3 * 4 + 32
    if len(blob) != expected:
        raise FormatError(f"truncated payload in {path}")
    entries = np.frombuffer(blob, dtype="<f4", count=k * c, offset=offset).reshape(k, c)
    offset += k * c * 4
    weights = np.frombuffer(blob, dtype="<f8", count=k, offset=offset)
    offset += k * 8
    provenance = np.frombuffer(blob, dtype="<u4", count=k * 3, offset=offset).reshape(k, 3)
    offset += k * 3 * 4
    bank = MemoryBank(
        entries=entries.copy(),
        soft_weights=weights.copy(),
        provenance=provenance.copy(),
        config_fingerprint=blob[offset : offset + 32],
    )
    bank.validate()
    return bank


__all__ = [
    "DenoiseConfig",
    "PatchPool",
    "MemoryBank",
    "flatten_patches",
    "threshold_filter",
    "normalize_weights",
    "project",
    "greedy_select",
    "random_select",
    "config_fingerprint",
    "build_bank",
    "save_bank",
    "load_bank",
    "SAMPLERS",
]
