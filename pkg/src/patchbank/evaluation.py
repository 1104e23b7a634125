"""Image- and pixel-level AUROC plus run-report formatting.

AUROC follows the Mann-Whitney formulation: the probability that a random
positive outscores a random negative, ties counted one half.  It is
computed from average ranks in O(n log n); the exhaustive pairwise count is
reserved for tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def auroc(scores, labels) -> float:
    """Area under the ROC curve for binary labels, ties counted 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be equal-length vectors")
    if not np.isfinite(s).all():
        raise InputError("non-finite score")
    pos = y.astype(bool)
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise InputError("degenerate labels: need both classes")

    order = np.argsort(s, kind="mergesort")
    sorted_scores = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    # average rank over each run of tied scores
    boundaries = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1], True])
    for start, stop in zip(boundaries[:-1], boundaries[1:]):
        ranks[order[start:stop]] = 0.5 * (start + stop + 1)  # 1-based average
    rank_sum = ranks[pos].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pixel_auroc(maps, masks) -> float:
    """AUROC over the pooled pixels of all maps against binary masks."""
    if len(maps) != len(masks) or not maps:
        raise InputError("need equally many maps and masks")
    flat_scores = []
    flat_labels = []
    for m, gt in zip(maps, masks):
        m = np.asarray(m, dtype=np.float64)
        gt = np.asarray(gt)
        if m.shape != gt.shape:
            raise InputError(f"map shape {m.shape} does not match mask {gt.shape}")
        flat_scores.append(m.reshape(-1))
        flat_labels.append(gt.reshape(-1).astype(bool))
    return auroc(np.concatenate(flat_scores), np.concatenate(flat_labels))


@dataclass
class EvalReport:
    image_auroc: float
    pixel_auroc: float | None = None
    per_category: dict[str, tuple[float, float | None]] = field(default_factory=dict)
    noise_ratio: float = 0.0
    setting: str = "no_overlap"

    def to_text(self, fingerprint: str | None = None) -> str:
        lines = []
        if fingerprint:
            lines.append(f"# config_fingerprint={fingerprint}")
        lines.append(f"image_auroc={self.image_auroc!r}")
        if self.pixel_auroc is not None:
            lines.append(f"pixel_auroc={self.pixel_auroc!r}")
        lines.append(f"noise_ratio={self.noise_ratio!r}")
        lines.append(f"setting={self.setting}")
        for name, (img, pix) in sorted(self.per_category.items()):
            pix_text = "n/a" if pix is None else repr(pix)
            lines.append(f"category={name} image_auroc={img!r} pixel_auroc={pix_text}")
        return "\n".join(lines) + "\n"


def format_table(headers: list[str], rows: list[list[str]]) -> str:
    """Aligned-column plain-text table."""
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(row):
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
    ruler = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), ruler] + [fmt(r) for r in rows]) + "\n"


def _value_text(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def category_table(
    values: dict[str, dict[str, float | None]],
    methods: list[str],
    reference: dict[str, float | None] | None = None,
    label: str = "category",
) -> str:
    """Category rows by method columns, with Average and Gap summary rows.

    `reference` holds each method's clean-scene value; the Gap row shows
    noisy minus clean.
    """
    rows = []
    for name in values:
        rows.append([name] + [_value_text(values[name].get(m)) for m in methods])
    averages: dict[str, float | None] = {}
    for m in methods:
        cells = [values[name].get(m) for name in values]
        cells = [c for c in cells if c is not None]
        averages[m] = sum(cells) / len(cells) if cells else None
    rows.append(["Average"] + [_value_text(averages[m]) for m in methods])
    if reference is not None:
        gap_row = ["Gap"]
        for m in methods:
            avg, ref = averages.get(m), reference.get(m)
            if avg is None or ref is None:
                gap_row.append("n/a")
            else:
                gap_row.append(f"{avg - ref:+.4f}")
        rows.append(gap_row)
    return format_table([label] + methods, rows)


def trend_table(
    cells: dict[tuple[float, str], float | None],
    ratios: list[float],
    methods: list[str],
    metric: str = "image_auroc",
) -> str:
    """Noise-ratio rows by method columns (performance-trend layout)."""
    rows = []
    for ratio in ratios:
        rows.append([f"{ratio:g}"] + [_value_text(cells.get((ratio, m))) for m in methods])
    return format_table([f"noise\\{metric}"] + methods, rows)


__all__ = [
    "auroc",
    "pixel_auroc",
    "EvalReport",
    "format_table",
    "category_table",
    "trend_table",
]
