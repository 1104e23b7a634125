"""Per-patch outlier scoring for a training set, grouped by spatial position.

For every spatial cell (h, w) the patch vectors of all training images form
one group of size n; each group is scored independently by the configured
method:

* ``nearest``  - distance to the closest other sample in the group,
* ``gaussian`` - Mahalanobis distance under a shared per-position Gaussian
  fitted on all samples (the scored sample included),
* ``lof``      - local outlier factor with an exactly-k neighbor set.

Scores accumulate in float64 over float32 inputs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InputError
from .featureio import FeatureDataset

# guard for all-duplicate neighborhoods, keeps lrd finite
LRD_GUARD = 1e-12

METHODS = ("nearest", "gaussian", "lof")


@dataclass
class PositionGroup:
    """All images' patch vectors at one spatial cell."""

    position: tuple[int, int]
    vectors: np.ndarray  # (n, c)


@dataclass
class ScoreTensor:
    """Per-patch outlier scores for a whole dataset, shape (n, h, w)."""

    scores: np.ndarray
    method: str

    def validate(self) -> None:
        if not np.isfinite(self.scores).all():
            raise InputError("non-finite outlier score")
        low = self.scores.min(initial=np.inf)
        if self.method == "lof" and low <= 0:
            raise InputError("lof scores must be strictly positive")
        if low < 0:
            raise InputError("outlier scores must be nonnegative")


@dataclass
class GaussianModel:
    """Shared per-position Gaussian: batch mean, regularized sample covariance."""

    mean: np.ndarray
    cov: np.ndarray
    epsilon: float


@dataclass
class DiscriminatorConfig:
    method: str = "lof"
    lof_k: int = 6
    epsilon: float = 0.01

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InputError(f"unknown discriminator method '{self.method}'")
        if self.lof_k < 1:
            raise InputError("lof_k must be positive")
        if self.epsilon <= 0:
            raise InputError("epsilon must be positive")


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Exact L2 distance matrix in float64 via explicit differences.

    Row-chunked so the (chunk, n, c) difference tensor stays near 128 MB;
    chunking does not change any value.
    """
    x = np.asarray(x, dtype=np.float64)
    n, c = x.shape
    out = np.empty((n, n), dtype=np.float64)
    step = max(1, (1 << 24) // max(1, n * c))
    for s in range(0, n, step):
        diff = x[s : s + step, None, :] - x[None, :, :]
        out[s : s + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def nn_scores(vectors: np.ndarray) -> np.ndarray:
    """Distance to each sample's nearest other sample in the group."""
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise InputError("need at least two samples")
    dist = _pairwise_distances(x)
    np.fill_diagonal(dist, np.inf)
    return dist.min(axis=1)


def gaussian_fit(vectors: np.ndarray, epsilon: float = 0.01) -> GaussianModel:
    """Batch mean and (1/(n-1))-normalized sample covariance plus epsilon*I."""
    x = np.asarray(vectors, dtype=np.float64)
    n, c = x.shape
    if n < 2:
        raise InputError("need at least two samples")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov[np.diag_indices(c)] += epsilon
    return GaussianModel(mean=mean, cov=cov, epsilon=epsilon)


def mahalanobis_scores(vectors: np.ndarray, model: GaussianModel) -> np.ndarray:
    """Mahalanobis distances via Cholesky; never forms an explicit inverse."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.shape[1] != model.mean.shape[0]:
        raise InputError("dimension mismatch between group and Gaussian model")
    # epsilon > 0 makes cov positive-definite, so the factorization must succeed
    lower = np.linalg.cholesky(model.cov)
    y = solve_triangular(lower, (x - model.mean).T, lower=True)
    return np.sqrt(np.einsum("ij,ij->j", y, y))


def lof_scores(vectors: np.ndarray, k: int) -> np.ndarray:
    """Local outlier factor with |N_k| = exactly k.

    Ties at the k-th distance are broken by lower sample index; the lrd
    denominator carries a 1e-12 guard so fully duplicated groups score 1.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n - 1:
        raise InputError(f"k out of range: k={k}, n={n}")
    dist = _pairwise_distances(x)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    neighbors = order[:, :k]
    rows = np.arange(n)
    k_dist = dist[rows, neighbors[:, -1]]
    reach = np.maximum(k_dist[neighbors], dist[rows[:, None], neighbors])
    lrd = 1.0 / (reach.mean(axis=1) + LRD_GUARD)
    return lrd[neighbors].mean(axis=1) / lrd


def position_groups(dataset: FeatureDataset):
    """Iterate PositionGroups across the batch dimension, row-major."""
    _, _, h, w = dataset.shape
    for i in range(h):
        for j in range(w):
            yield PositionGroup((i, j), dataset.position(i, j))


def score_all(dataset: FeatureDataset, config: DiscriminatorConfig, threads: int = 1) -> ScoreTensor:
    """Score every patch of the dataset with the configured per-group scorer."""
    config.validate()
    n, _, h, w = dataset.shape
    if n < 2:
        raise InputError("need at least two samples")
    if config.method == "lof" and config.lof_k >= n:
        raise InputError(f"k out of range: k={config.lof_k}, n={n}")

    if config.method == "nearest":
        scorer = nn_scores
    elif config.method == "gaussian":
        def scorer(vectors: np.ndarray) -> np.ndarray:
            return mahalanobis_scores(vectors, gaussian_fit(vectors, config.epsilon))
    else:
        def scorer(vectors: np.ndarray) -> np.ndarray:
            return lof_scores(vectors, config.lof_k)

    out = np.empty((n, h, w), dtype=np.float64)

    def run(cell: tuple[int, int]) -> None:
        i, j = cell
        out[:, i, j] = scorer(dataset.position(i, j))

    cells = [(i, j) for i in range(h) for j in range(w)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, cells))
    else:
        for cell in cells:
            run(cell)

    tensor = ScoreTensor(out, config.method)
    tensor.validate()
    return tensor


__all__ = [
    "PositionGroup",
    "ScoreTensor",
    "GaussianModel",
    "DiscriminatorConfig",
    "nn_scores",
    "gaussian_fit",
    "mahalanobis_scores",
    "lof_scores",
    "position_groups",
    "score_all",
    "METHODS",
    "LRD_GUARD",
]
