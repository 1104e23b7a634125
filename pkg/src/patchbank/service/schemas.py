"""Pydantic request/response models for the scoring service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RunConfigModel(BaseModel):
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


class TrainRequest(BaseModel):
    train_manifest: str
    out_bank: str
    audit_scores: str | None = None  # optional SPS1 export of raw outlier scores
    config: RunConfigModel = Field(default_factory=RunConfigModel)


class TrainResponse(BaseModel):
    bank_path: str
    fingerprint: str
    total_patches: int
    retained: int
    removed: int
    bank_size: int
    weight_min: float
    weight_mean: float
    weight_max: float
    config: RunConfigModel


class ImageScore(BaseModel):
    image_id: str
    score: float


class InferRequest(BaseModel):
    bank: str
    manifest: str
    out_scores: str
    maps_dir: str | None = None
    maps_format: str = "spf1"
    config: RunConfigModel = Field(default_factory=RunConfigModel)


class InferResponse(BaseModel):
    scores_path: str
    maps_index: str | None = None
    fingerprint: str
    scores: list[ImageScore]


class EvalRequest(BaseModel):
    scores: str
    manifest: str
    maps_dir: str | None = None
    out_report: str | None = None
    category: str | None = None
    noise_ratio: float = 0.0
    setting: str = "no_overlap"


class EvalResponse(BaseModel):
    image_auroc: float
    pixel_auroc: float | None = None
    report_path: str | None = None
    fingerprint: str | None = None


class InjectRequest(BaseModel):
    train_manifest: str
    test_manifest: str
    noise_ratio: float
    setting: str = "no_overlap"
    seed: int = 0
    out_dir: str


class InjectResponse(BaseModel):
    train_manifest: str
    test_manifest: str
    injected: int


class SyntheticRequest(BaseModel):
    out_dir: str
    n_train: int = 60
    n_test_normal: int = 40
    n_test_anomalous: int = 20
    height: int = 8
    width: int = 8
    channels: int = 32
    outlier_shift: float = 5.0
    cluster_std: float = 0.1
    seed: int = 0
    mask_scale: int = 8


class SyntheticResponse(BaseModel):
    train_manifest: str
    test_manifest: str


class SweepRequest(BaseModel):
    train_manifest: str
    test_manifest: str
    ratios: list[float]
    settings: list[str] = ["no_overlap"]
    methods: list[str] = ["lof"]
    repeats: int = 3
    out_dir: str | None = None
    config: RunConfigModel = Field(default_factory=RunConfigModel)


class SweepCellModel(BaseModel):
    noise_ratio: float
    setting: str
    method: str
    image_auroc: float
    pixel_auroc: float | None = None
    seeds: list[int]
    fingerprints: list[str]


class SweepResponse(BaseModel):
    cells: list[SweepCellModel]
    tables: dict[str, str]
    out_dir: str | None = None


class BankLoadRequest(BaseModel):
    path: str


class BankInfo(BaseModel):
    bank_id: str
    size: int
    channels: int
    fingerprint: str


class ScoreRequest(BaseModel):
    image_id: str = "query"
    # row-major (h, w, c) nested list of f32 patch features
    features: list[list[list[float]]]
    render_map: bool = False
    map_height: int | None = None
    map_width: int | None = None
    sigma: float = 4.0


class ScoreResponse(BaseModel):
    image_id: str
    image_score: float
    patch_scores: list[list[float]]
    pixel_map: list[list[float]] | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
