"""Noise-robust patch-memory anomaly detection engine.

Training patches are scored per spatial position by a noise discriminator
(nearest-neighbor distance, Mahalanobis distance or local outlier factor),
the most suspicious fraction is removed before coreset subsampling, and
the surviving scores ride along in the memory bank as soft weights that
re-scale nearest-neighbor anomaly scores at inference time.
"""

__version__ = "0.1.0"

from .coreset import (
    DenoiseConfig,
    MemoryBank,
    PatchPool,
    build_bank,
    greedy_select,
    load_bank,
    normalize_weights,
    project,
    random_select,
    save_bank,
    threshold_filter,
)
from .discriminators import (
    DiscriminatorConfig,
    GaussianModel,
    ScoreTensor,
    gaussian_fit,
    lof_scores,
    mahalanobis_scores,
    nn_scores,
    score_all,
)
from .errors import FormatError, InfeasibleError, InputError, PatchBankError
from .evaluation import EvalReport, auroc, pixel_auroc
from .experiment import (
    NoiseInjectionSpec,
    SyntheticSpec,
    generate_synthetic,
    inject_noise,
    make_overlap_benchmark,
    run_sweep,
)
from .featureio import (
    DatasetManifest,
    FeatureDataset,
    FeatureMap,
    ManifestEntry,
    load_dataset,
    read_feature_file,
    read_manifest,
    write_feature_file,
    write_manifest,
)
from .inference import AnomalyResult, anomaly_map, query_nearest, score_image, score_patch
from .pipeline import RunConfig, compute_scores, train_bank
