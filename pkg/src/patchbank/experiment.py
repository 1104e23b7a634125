"""Noisy-training-set construction, synthetic fixtures and sweep orchestration.

Noise injection mirrors the benchmark protocol used throughout: anomalous
images are sampled from the test manifest and appended to the training
manifest, relabeled normal with an audit-only ``injected`` flag.  Under the
``no_overlap`` setting the sampled entries leave the test set; under
``overlap`` they stay, so a bank polluted by them collides with evaluation.

The synthetic generator plants a contiguous block of shifted patches on a
fraction of images, mimicking localized defects, and returns ground-truth
flags so denoising recall can be verified directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InfeasibleError, InputError
from .evaluation import EvalReport
from .featureio import DatasetManifest, FeatureDataset, ManifestEntry

SETTINGS = ("no_overlap", "overlap")


@dataclass
class NoiseInjectionSpec:
    noise_ratio: float
    setting: str = "no_overlap"
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.noise_ratio <= 0.5:
            raise InputError(f"noise_ratio must be in [0, 0.5], got {self.noise_ratio}")
        if self.setting not in SETTINGS:
            raise InputError(f"unknown setting '{self.setting}'")


def inject_noise(
    train: DatasetManifest, test: DatasetManifest, spec: NoiseInjectionSpec
) -> tuple[DatasetManifest, DatasetManifest]:
    """Move a seeded sample of anomalous test entries into the training set.

    The injected count is round(noise_ratio * len(train)), relative to the
    clean training size; the original normal entries are untouched.
    Injected entries are relabeled normal (their mask dropped) and flagged
    ``injected`` for audit only.
    """
    spec.validate()
    count = int(round(spec.noise_ratio * len(train.entries)))
    anomalous = [i for i, e in enumerate(test.entries) if e.label == "anomalous"]
    if count > len(anomalous):
        raise InfeasibleError(
            f"cannot inject {count} anomalous images, test set only has {len(anomalous)}"
        )
    rng = np.random.default_rng(spec.seed)
    chosen = sorted(rng.choice(len(anomalous), size=count, replace=False).tolist())
    picked = {anomalous[j] for j in chosen}
    injected = [
        replace(test.entries[i], label="normal", mask_path=None, injected=True)
        for i in sorted(picked)
    ]
    new_train = DatasetManifest(list(train.entries) + injected)
    if spec.setting == "no_overlap":
        new_test = DatasetManifest([e for i, e in enumerate(test.entries) if i not in picked])
    else:
        new_test = DatasetManifest(list(test.entries))
    new_train.validate()
    new_test.validate()
    return new_train, new_test


@dataclass
class SyntheticSpec:
    n_images: int = 60
    height: int = 8
    width: int = 8
    channels: int = 32
    outlier_fraction: float = 0.1
    outlier_shift: float = 5.0
    cluster_std: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_images < 1 or min(self.height, self.width, self.channels) < 1:
            raise InputError("synthetic spec dims must be positive")
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise InputError("outlier_fraction must be in [0, 0.5)")
        if self.cluster_std <= 0:
            raise InputError("cluster_std must be positive")


def _position_means(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    return rng.standard_normal((spec.height, spec.width, spec.channels))


def _defect_block(spec: SyntheticSpec) -> tuple[int, int]:
    """Block dims covering roughly 20% of the patch grid."""
    target = max(1, round(0.2 * spec.height * spec.width))
    bh = min(spec.height, max(1, round(math.sqrt(target * spec.height / spec.width))))
    bw = min(spec.width, max(1, round(target / bh)))
    return bh, bw


def _draw_image(
    means: np.ndarray, spec: SyntheticSpec, rng: np.random.Generator, planted: bool
) -> tuple[np.ndarray, np.ndarray]:
    """One feature map plus its per-patch defect flags.

    The defect offset is an isotropic Gaussian draw with per-channel std
    outlier_shift * cluster_std, shared by the whole block: a random
    direction whose magnitude keeps the defect separable from ordinary
    sampling noise at any channel count.
    """
    h, w, c = means.shape
    data = means + spec.cluster_std * rng.standard_normal((h, w, c))
    flags = np.zeros((h, w), dtype=bool)
    if planted:
        bh, bw = _defect_block(spec)
        top = int(rng.integers(0, h - bh + 1))
        left = int(rng.integers(0, w - bw + 1))
        offset = spec.outlier_shift * spec.cluster_std * rng.standard_normal(c)
        data[top : top + bh, left : left + bw, :] += offset
        flags[top : top + bh, left : left + bw] = True
    return data.astype(np.float32), flags


def generate_synthetic(
    spec: SyntheticSpec, id_prefix: str = "img"
) -> tuple[FeatureDataset, np.ndarray, np.ndarray]:
    """Seeded synthetic dataset with planted localized outlier blocks.

    Returns the dataset, per-image outlier flags (n,) and per-patch flags
    (n, h, w).  Image content depends only on (seed, image index), so
    datasets of different sizes share their common prefix.
    """
    spec.validate()
    means = _position_means(spec)
    n = spec.n_images
    n_out = int(round(spec.outlier_fraction * n))
    image_flags = np.zeros(n, dtype=bool)
    if n_out:
        sel = np.random.default_rng([spec.seed, 3]).choice(n, size=n_out, replace=False)
        image_flags[sel] = True
    maps = np.empty((n, spec.height, spec.width, spec.channels), dtype=np.float32)
    patch_flags = np.zeros((n, spec.height, spec.width), dtype=bool)
    for i in range(n):
        rng = np.random.default_rng([spec.seed, 1, i])
        maps[i], patch_flags[i] = _draw_image(means, spec, rng, bool(image_flags[i]))
    ids = [f"{id_prefix}_{i:04d}" for i in range(n)]
    return FeatureDataset(maps, ids), image_flags, patch_flags


def fresh_normals(spec: SyntheticSpec, count: int, id_prefix: str = "test_normal") -> FeatureDataset:
    """Clean maps drawn from the same position clusters, disjoint rng stream."""
    spec.validate()
    means = _position_means(spec)
    maps = np.empty((count, spec.height, spec.width, spec.channels), dtype=np.float32)
    for j in range(count):
        rng = np.random.default_rng([spec.seed, 2, j])
        maps[j], _ = _draw_image(means, spec, rng, planted=False)
    ids = [f"{id_prefix}_{j:04d}" for j in range(count)]
    return FeatureDataset(maps, ids)


def fresh_anomalies(
    spec: SyntheticSpec, count: int, id_prefix: str = "test_anom"
) -> tuple[FeatureDataset, np.ndarray]:
    """Planted maps from a disjoint rng stream, with per-patch flags."""
    spec.validate()
    means = _position_means(spec)
    maps = np.empty((count, spec.height, spec.width, spec.channels), dtype=np.float32)
    flags = np.zeros((count, spec.height, spec.width), dtype=bool)
    for j in range(count):
        rng = np.random.default_rng([spec.seed, 4, j])
        maps[j], flags[j] = _draw_image(means, spec, rng, planted=True)
    ids = [f"{id_prefix}_{j:04d}" for j in range(count)]
    return FeatureDataset(maps, ids), flags


@dataclass
class OverlapBenchmark:
    """Noisy train set whose planted maps are duplicated into the test set."""

    train: FeatureDataset
    test: FeatureDataset
    test_labels: np.ndarray  # (n_test,) bool, True = anomalous
    train_image_flags: np.ndarray
    train_patch_flags: np.ndarray


def make_overlap_benchmark(spec: SyntheticSpec, n_test_normal: int = 40) -> OverlapBenchmark:
    train, image_flags, patch_flags = generate_synthetic(spec, id_prefix="train")
    normals = fresh_normals(spec, n_test_normal)
    dup_idx = np.flatnonzero(image_flags)
    dup_maps = train.array[dup_idx].copy()
    dup_ids = [f"dup_{train.image_ids[i]}" for i in dup_idx]
    test_array = np.concatenate([normals.array, dup_maps], axis=0)
    test_ids = normals.image_ids + dup_ids
    labels = np.r_[np.zeros(len(normals.image_ids), dtype=bool), np.ones(len(dup_ids), dtype=bool)]
    return OverlapBenchmark(
        train=train,
        test=FeatureDataset(test_array, test_ids),
        test_labels=labels,
        train_image_flags=image_flags,
        train_patch_flags=patch_flags,
    )


# ---------------------------------------------------------------------------
# sweep orchestration
# ---------------------------------------------------------------------------


@dataclass
class SweepCell:
    noise_ratio: float
    setting: str
    method: str
    report: EvalReport
    seeds: list[int] = field(default_factory=list)
    fingerprints: list[str] = field(default_factory=list)


def run_sweep(
    train: DatasetManifest,
    test: DatasetManifest,
    ratios: list[float],
    settings: list[str],
    methods: list[str],
    base_config,
    repeats: int = 3,
    manifest_dir=None,
) -> list[SweepCell]:
    """Full cross-product of (ratio, setting, method), each cell averaged
    over `repeats` runs with distinct seeds."""
    from . import pipeline

    if repeats < 1:
        raise InputError("repeats must be positive")
    cells = []
    for ratio in ratios:
        for setting in settings:
            for method in methods:
                image_vals, pixel_vals, seeds, prints = [], [], [], []
                for r in range(repeats):
                    seed = base_config.seed + r
                    spec = NoiseInjectionSpec(ratio, setting, seed)
                    train_r, test_r = inject_noise(train, test, spec)
                    cfg = replace(base_config, method=method, seed=seed)
                    report, fingerprint = pipeline.run_once(train_r, test_r, cfg, manifest_dir)
                    image_vals.append(report.image_auroc)
                    if report.pixel_auroc is not None:
                        pixel_vals.append(report.pixel_auroc)
                    seeds.append(seed)
                    prints.append(fingerprint)
                avg = EvalReport(
                    image_auroc=float(np.mean(image_vals)),
                    pixel_auroc=float(np.mean(pixel_vals)) if pixel_vals else None,
                    noise_ratio=ratio,
                    setting=setting,
                )
                cells.append(SweepCell(ratio, setting, method, avg, seeds, prints))
    return cells


__all__ = [
    "NoiseInjectionSpec",
    "SyntheticSpec",
    "inject_noise",
    "generate_synthetic",
    "fresh_normals",
    "fresh_anomalies",
    "OverlapBenchmark",
    "make_overlap_benchmark",
    "SweepCell",
    "run_sweep",
    "SETTINGS",
]
