"""End-to-end orchestration shared by the HTTP service and the CLI client.

Everything here is deterministic for a fixed RunConfig: the config (seed
included) is hashed into a fingerprint that is embedded in every artifact,
and rerunning with identical flags reproduces byte-identical outputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import experiment
from .coreset import DenoiseConfig, MemoryBank, build_bank, config_fingerprint
from .discriminators import DiscriminatorConfig, ScoreTensor, score_all
from .errors import InputError
from .evaluation import EvalReport, auroc, pixel_auroc
from .featureio import (
    DatasetManifest,
    FeatureDataset,
    FeatureMap,
    ManifestEntry,
    entry_mask,
    load_dataset,
    read_feature_file,
    read_manifest,
    resolve_path,
    write_feature_file,
    write_manifest,
    write_mask,
)
from .inference import AnomalyResult, anomaly_map, score_image

PIPELINE_METHODS = ("nearest", "gaussian", "lof", "none")


@dataclass
class RunConfig:
    """Every knob of a train/infer/eval run, fully serialized into outputs."""

    method: str = "lof"
    tau: float = 0.15
    sampler: str = "greedy"
    sampling_ratio: float = 0.10
    projection_dim: int | None = 128
    lof_k: int = 6
    epsilon: float = 0.01
    sigma: float = 4.0
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.method not in PIPELINE_METHODS:
            raise InputError(f"unknown method '{self.method}'")
        if self.threads < 1:
            raise InputError("threads must be positive")
        DenoiseConfig(
            self.tau, self.sampler, self.sampling_ratio, self.projection_dim, self.seed
        ).validate()
        if self.method in ("nearest", "gaussian", "lof"):
            DiscriminatorConfig(self.method, self.lof_k, self.epsilon).validate()

    def as_dict(self) -> dict:
        return asdict(self)

    def fingerprint_hex(self) -> str:
        return config_fingerprint(self.as_dict()).hex()


def compute_scores(dataset: FeatureDataset, cfg: RunConfig) -> ScoreTensor:
    """Patch outlier scores; the ``none`` method yields unit scores, which
    disables both removal and soft weighting downstream."""
    n, _, h, w = dataset.shape
    if cfg.method == "none":
        return ScoreTensor(np.ones((n, h, w), dtype=np.float64), "none")
    return score_all(dataset, DiscriminatorConfig(cfg.method, cfg.lof_k, cfg.epsilon), cfg.threads)


def train_bank(
    dataset: FeatureDataset, cfg: RunConfig, audit_scores: str | Path | None = None
) -> tuple[MemoryBank, dict]:
    """Score, denoise and subsample a training dataset into a memory bank.

    When `audit_scores` is set the raw outlier-score tensor is exported as
    an SPS1 file before any thresholding.
    """
    cfg.validate()
    if dataset.n_images < 2:
        raise InputError("need at least two samples")
    scores = compute_scores(dataset, cfg)
    if audit_scores is not None:
        from .featureio import write_score_file

        write_score_file(scores.scores, audit_scores)
    denoise = DenoiseConfig(
        tau=cfg.tau,
        sampler=cfg.sampler,
        sampling_ratio=cfg.sampling_ratio,
        projection_dim=cfg.projection_dim,
        seed=cfg.seed,
    )
    bank = build_bank(dataset, scores, denoise, cfg.method, cfg.as_dict())
    n, _, h, w = dataset.shape
    total = n * h * w
    drop = int(np.floor(cfg.tau * total))
    cutoff = (
        np.partition(scores.scores.reshape(-1), total - drop - 1)[total - drop - 1]
        if drop
        else np.inf
    )
    retained = int((scores.scores.reshape(-1) <= cutoff).sum())
    stats = {
        "total_patches": total,
        "retained": retained,
        "removed": total - retained,
        "bank_size": len(bank),
        "weight_min": float(bank.soft_weights.min()),
        "weight_mean": float(bank.soft_weights.mean()),
        "weight_max": float(bank.soft_weights.max()),
        "fingerprint": bank.config_fingerprint.hex(),
    }
    return bank, stats


def train_bank_from_manifest(
    manifest_path: str | Path, cfg: RunConfig, audit_scores: str | Path | None = None
) -> tuple[MemoryBank, dict]:
    manifest = read_manifest(manifest_path)
    dataset = load_dataset(manifest, manifest_path)
    return train_bank(dataset, cfg, audit_scores)


def score_manifest(
    bank: MemoryBank,
    manifest: DatasetManifest,
    manifest_path: str | Path | None = None,
    sigma: float | None = None,
) -> list[AnomalyResult]:
    """Score every manifest entry; pixel maps are rendered when sigma is set."""
    results = []
    for entry in manifest.entries:
        fmap = read_feature_file(
            resolve_path(entry.feature_path, manifest_path), entry.image_id
        )
        result = score_image(bank, fmap)
        if sigma is not None:
            result = anomaly_map(result, entry.height, entry.width, sigma)
        results.append(result)
    return results


def evaluate_results(
    scores_by_id: dict[str, float],
    manifest: DatasetManifest,
    manifest_path: str | Path | None = None,
    maps_by_id: dict[str, np.ndarray] | None = None,
    noise_ratio: float = 0.0,
    setting: str = "no_overlap",
    category: str | None = None,
) -> EvalReport:
    """Image-level AUROC from manifest labels, pixel-level when maps given.

    Normal entries contribute all-zero masks to the pixel ranking, matching
    the pooled-pixel convention.
    """
    missing = [e.image_id for e in manifest.entries if e.image_id not in scores_by_id]
    if missing:
        raise InputError(f"no score for image_id '{missing[0]}'")
    labels = np.array([e.label == "anomalous" for e in manifest.entries])
    values = np.array([scores_by_id[e.image_id] for e in manifest.entries])
    image_auc = auroc(values, labels)

    pixel_auc = None
    if maps_by_id:
        maps, masks = [], []
        for entry in manifest.entries:
            if entry.image_id not in maps_by_id:
                raise InputError(f"no pixel map for image_id '{entry.image_id}'")
            maps.append(maps_by_id[entry.image_id])
            masks.append(entry_mask(entry, manifest_path))
        pixel_auc = pixel_auroc(maps, masks)

    report = EvalReport(
        image_auroc=image_auc,
        pixel_auroc=pixel_auc,
        noise_ratio=noise_ratio,
        setting=setting,
    )
    if category:
        report.per_category[category] = (image_auc, pixel_auc)
    return report


def run_once(
    train: DatasetManifest,
    test: DatasetManifest,
    cfg: RunConfig,
    manifest_dir: str | Path | None = None,
) -> tuple[EvalReport, str]:
    """Train on one manifest, score another, evaluate.  Used by sweeps."""
    train_ds = load_dataset(train, manifest_dir)
    bank, stats = train_bank(train_ds, cfg)
    with_masks = any(e.mask_path for e in test.entries)
    results = score_manifest(bank, test, manifest_dir, cfg.sigma if with_masks else None)
    scores = {r.image_id: r.image_score for r in results}
    maps = {r.image_id: r.pixel_map for r in results} if with_masks else None
    report = evaluate_results(scores, test, manifest_dir, maps)
    return report, stats["fingerprint"]


# ---------------------------------------------------------------------------
# artifact files
# ---------------------------------------------------------------------------


def write_scores_file(results: list[AnomalyResult], path: str | Path, fingerprint: str) -> None:
    lines = [f"# config_fingerprint={fingerprint}"]
    for r in results:
        lines.append(f"image_id={r.image_id} score={r.image_score!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores_file(path: str | Path) -> tuple[dict[str, float], str | None]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing scores file: {path}")
    fingerprint = None
    scores: dict[str, float] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "config_fingerprint=" in line:
                fingerprint = line.split("config_fingerprint=", 1)[1].strip()
            continue
        fields = dict(token.split("=", 1) for token in line.split())
        if "image_id" not in fields or "score" not in fields:
            raise InputError(f"malformed scores line: '{line}'")
        scores[fields["image_id"]] = float(fields["score"])
    return scores, fingerprint


def save_pixel_maps(
    results: list[AnomalyResult],
    out_dir: str | Path,
    fingerprint: str,
    fmt: str = "spf1",
) -> Path:
    """Write pixel maps plus an index file carrying the config fingerprint.

    ``spf1`` keeps exact float values as single-channel tensors; ``png16``
    rescales each map to the full 16-bit range for viewing.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_lines = [f"# config_fingerprint={fingerprint}"]
    for r in results:
        if r.pixel_map is None:
            raise InputError(f"no pixel map rendered for '{r.image_id}'")
        if fmt == "spf1":
            name = f"{r.image_id}.spf"
            fmap = FeatureMap(r.image_id, r.pixel_map.astype(np.float32)[:, :, None])
            write_feature_file(fmap, out_dir / name)
        elif fmt == "png16":
            name = f"{r.image_id}.png"
            top = float(r.pixel_map.max())
            scaled = r.pixel_map / top if top > 0 else r.pixel_map
            arr = (scaled * 65535.0).astype(np.uint16)
            from PIL import Image

            Image.fromarray(arr).save(out_dir / name)
        else:
            raise InputError(f"unknown map format '{fmt}'")
        index_lines.append(f"image_id={r.image_id} map={name}")
    index = out_dir / "maps.index"
    index.write_text("\n".join(index_lines) + "\n")
    return index


def write_synthetic_benchmark(
    out_dir: str | Path,
    spec: experiment.SyntheticSpec,
    n_train: int,
    n_test_normal: int,
    n_test_anomalous: int,
    mask_scale: int = 8,
) -> tuple[Path, Path]:
    """Materialize a synthetic benchmark: clean train manifest plus a test
    manifest holding normals and planted-defect images with masks."""
    out_dir = Path(out_dir)
    features = out_dir / "features"
    masks_dir = out_dir / "masks"
    features.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    clean_spec = replace(spec, n_images=n_train, outlier_fraction=0.0)
    train_ds, _, _ = experiment.generate_synthetic(clean_spec, id_prefix="train")
    normals = experiment.fresh_normals(spec, n_test_normal)
    anoms, flags = experiment.fresh_anomalies(spec, n_test_anomalous)

    big_h, big_w = spec.height * mask_scale, spec.width * mask_scale

    def dump(ds: FeatureDataset, label: str, patch_flags: np.ndarray | None = None):
        entries = []
        for i, image_id in enumerate(ds.image_ids):
            name = f"{image_id}.spf"
            write_feature_file(FeatureMap(image_id, ds.array[i]), features / name)
            mask_path = None
            if patch_flags is not None:
                mask = np.kron(patch_flags[i], np.ones((mask_scale, mask_scale), dtype=bool))
                mask_path = f"masks/{image_id}.png"
                write_mask(mask, out_dir / mask_path)
            entries.append(
                ManifestEntry(
                    feature_path=f"features/{name}",
                    image_id=image_id,
                    label=label,
                    height=big_h,
                    width=big_w,
                    mask_path=mask_path,
                )
            )
        return entries

    train_entries = dump(train_ds, "normal")
    test_entries = dump(normals, "normal") + dump(anoms, "anomalous", flags)

    train_path = out_dir / "train.manifest"
    test_path = out_dir / "test.manifest"
    write_manifest(DatasetManifest(train_entries), train_path)
    write_manifest(DatasetManifest(test_entries), test_path)
    return train_path, test_path


__all__ = [
    "RunConfig",
    "PIPELINE_METHODS",
    "compute_scores",
    "train_bank",
    "train_bank_from_manifest",
    "score_manifest",
    "evaluate_results",
    "run_once",
    "write_scores_file",
    "read_scores_file",
    "save_pixel_maps",
    "write_synthetic_benchmark",
]
