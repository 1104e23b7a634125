"""Writers for the patchbank on-disk interfaces: SPF1 tensors and manifests.

These formats are the public contract between the extractor and the
engine; the layouts are mirrored from the engine's documentation rather
than imported from it, so this package stays dependency-free of it.

SPF1: magic ``SPF1\\0``, u32 version (1), u32 dims c,h,w (little endian),
then c*h*w IEEE-754 f32 in (h, w, c) row-major order.
Manifest: one record per line of key=value fields: feature_path,
image_id, label, optional mask_path, H, W.
"""

from __future__ import annotations

import shlex
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPF1_MAGIC = b"SPF1\x00"
_HEADER = struct.Struct("<I3I")


def write_spf1(data: np.ndarray, path: str | Path) -> None:
    """Write an (h, w, c) float32 tensor; rejects non-finite values."""
    if data.ndim != 3:
        raise ValueError(f"expected (h, w, c) tensor, got {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("non-finite value in feature tensor")
    h, w, c = data.shape
    with open(path, "wb") as fh:
        fh.write(SPF1_MAGIC)
        fh.write(_HEADER.pack(1, c, h, w))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_spf1_dims(path: str | Path) -> tuple[int, int, int]:
    """Header-only read used by tests: returns (c, h, w)."""
    blob = Path(path).read_bytes()
    if blob[: len(SPF1_MAGIC)] != SPF1_MAGIC:
        raise ValueError(f"bad magic in {path}")
    version, c, h, w = _HEADER.unpack_from(blob, len(SPF1_MAGIC))
    if version != 1:
        raise ValueError(f"unsupported version {version}")
    return c, h, w


@dataclass
class ManifestRecord:
    feature_path: str
    image_id: str
    label: str
    height: int
    width: int
    mask_path: str | None = None


def write_manifest(records: list[ManifestRecord], path: str | Path) -> None:
    lines = []
    for r in records:
        parts = [
            f"feature_path={shlex.quote(r.feature_path)}",
            f"image_id={shlex.quote(r.image_id)}",
            f"label={r.label}",
        ]
        if r.mask_path is not None:
            parts.append(f"mask_path={shlex.quote(r.mask_path)}")
        parts.append(f"H={r.height}")
        parts.append(f"W={r.width}")
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")
