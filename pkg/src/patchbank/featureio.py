"""On-disk feature tensor format (SPF1), score export (SPS1) and dataset manifests.

SPF1 layout (little endian):
    bytes 0-4   magic ``SPF1\\0``
    bytes 5-8   format version, u32, value 1
    bytes 9-20  three u32 dims: channels, height, width
    payload     channels*height*width IEEE-754 f32 in (h, w, c) row-major order

SPS1 is the same container for per-patch score tensors with dims (n, h, w).

A manifest is a line-oriented text file, one record per line, each record a
sequence of ``key=value`` fields (shell-style quoting for values with
spaces).  Required keys: ``feature_path``, ``image_id``, ``label``, ``H``,
``W``; optional: ``mask_path``, ``injected``.  Labels are explicit, never
inferred from paths, so rewritten manifests stay diffable.
"""

from __future__ import annotations

import dataclasses
import shlex
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InputError

SPF1_MAGIC = b"SPF1\x00"
SPS1_MAGIC = b"SPS1\x00"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<I3I")  # version + three dims


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class FeatureMap:
    """One image's patch-feature tensor, stored (height, width, channels) f32."""

    image_id: str
    data: np.ndarray

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise InputError(f"feature tensor must be 3-d (h, w, c), got {self.data.ndim}-d")
        if min(self.data.shape) < 1:
            raise InputError(f"feature dims must be positive, got {self.data.shape}")
        if self.data.dtype != np.float32:
            raise InputError(f"feature tensor must be float32, got {self.data.dtype}")
        if not np.isfinite(self.data).all():
            raise InputError(f"non-finite value in feature tensor '{self.image_id}'")


@dataclass
class ManifestEntry:
    feature_path: str
    image_id: str
    label: str
    height: int
    width: int
    mask_path: str | None = None
    # audit-only marker set by noise injection; training ignores it
    injected: bool = False


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def validate(self) -> None:
        seen = set()
        for e in self.entries:
            if e.label not in ("normal", "anomalous"):
                raise InputError(f"bad label '{e.label}' for '{e.image_id}'")
            if e.image_id in seen:
                raise InputError(f"duplicate image_id '{e.image_id}' in manifest")
            if e.height < 1 or e.width < 1:
                raise InputError(f"bad image dims for '{e.image_id}'")
            seen.add(e.image_id)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class FeatureDataset:
    """All feature maps of a manifest stacked as one (n, h, w, c) f32 array."""

    array: np.ndarray
    image_ids: list[str]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        n, h, w, c = self.array.shape
        return (n, c, h, w)

    @property
    def n_images(self) -> int:
        return int(self.array.shape[0])

    def feature_map(self, index: int) -> FeatureMap:
        return FeatureMap(self.image_ids[index], self.array[index])

    def position(self, h: int, w: int) -> np.ndarray:
        """All images' patch vectors at one spatial cell, shape (n, c)."""
        return self.array[:, h, w, :]


# ---------------------------------------------------------------------------
# SPF1 / SPS1 tensor files
# ---------------------------------------------------------------------------


def _write_tensor(path: str | Path, magic: bytes, dims: tuple[int, ...], payload: np.ndarray) -> None:
    raw = np.ascontiguousarray(payload, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER.pack(FORMAT_VERSION, *dims))
        fh.write(raw.tobytes())


def _read_tensor(path: str | Path, magic: bytes) -> tuple[tuple[int, int, int], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing file: {path}")
    blob = path.read_bytes()
    if len(blob) < len(magic) + _HEADER.size:
        raise FormatError(f"truncated header in {path}")
    if blob[: len(magic)] != magic:
        raise FormatError(f"bad magic in {path}")
    version, d0, d1, d2 = _HEADER.unpack_from(blob, len(magic))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} in {path}")
    if min(d0, d1, d2) < 1:
        raise FormatError(f"non-positive dimension in {path}")
    count = d0 * d1 * d2
    body = blob[len(magic) + _HEADER.size :]
    if count * 4 > len(body):
        raise FormatError(f"truncated payload in {path}: expected {count} floats")
    if count * 4 < len(body):
        raise FormatError(f"trailing bytes in {path}")
    data = np.frombuffer(body, dtype="<f4", count=count)
    return (d0, d1, d2), data


def write_feature_file(fmap: FeatureMap, path: str | Path) -> None:
    """Write one FeatureMap as an SPF1 file; rejects non-finite tensors."""
    fmap.validate()
    _write_tensor(path, SPF1_MAGIC, (fmap.channels, fmap.height, fmap.width), fmap.data)


def read_feature_file(path: str | Path, image_id: str | None = None) -> FeatureMap:
    """Read and validate one SPF1 file; image_id defaults to the file stem."""
    (c, h, w), flat = _read_tensor(path, SPF1_MAGIC)
    fmap = FeatureMap(image_id or Path(path).stem, flat.reshape(h, w, c).copy())
    fmap.validate()
    return fmap


def write_score_file(scores: np.ndarray, path: str | Path) -> None:
    """Export an (n, h, w) score tensor as an SPS1 audit file."""
    if scores.ndim != 3:
        raise InputError("score tensor must be 3-d (n, h, w)")
    n, h, w = scores.shape
    _write_tensor(path, SPS1_MAGIC, (n, h, w), scores)


def read_score_file(path: str | Path) -> np.ndarray:
    (n, h, w), flat = _read_tensor(path, SPS1_MAGIC)
    return flat.reshape(n, h, w).astype(np.float64)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("feature_path", "image_id", "label", "H", "W")
_OPTIONAL_KEYS = ("mask_path", "injected")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing manifest: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = {}
        for token in shlex.split(line):
            key, sep, value = token.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected key=value, got '{token}'")
            if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
                raise FormatError(f"{path}:{lineno}: unknown field '{key}'")
            fields[key] = value
        missing = [k for k in _REQUIRED_KEYS if k not in fields]
        if missing:
            raise FormatError(f"{path}:{lineno}: missing fields {missing}")
        try:
            height, width = int(fields["H"]), int(fields["W"])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: H and W must be integers") from None
        entries.append(
            ManifestEntry(
                feature_path=fields["feature_path"],
                image_id=fields["image_id"],
                label=fields["label"],
                height=height,
                width=width,
                mask_path=fields.get("mask_path"),
                injected=fields.get("injected", "false").lower() == "true",
            )
        )
    manifest = DatasetManifest(entries)
    manifest.validate()
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    lines = []
    for e in manifest.entries:
        parts = [
            f"feature_path={shlex.quote(e.feature_path)}",
            f"image_id={shlex.quote(e.image_id)}",
            f"label={e.label}",
        ]
        if e.mask_path is not None:
            parts.append(f"mask_path={shlex.quote(e.mask_path)}")
        parts.append(f"H={e.height}")
        parts.append(f"W={e.width}")
        if e.injected:
            parts.append("injected=true")
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_path(raw: str, manifest_path: str | Path | None) -> Path:
    """Resolve a manifest-relative path against the manifest's directory."""
    p = Path(raw)
    if p.is_absolute() or manifest_path is None:
        return p
    return Path(manifest_path).parent / p


def rebase_manifest(manifest: DatasetManifest, manifest_path: str | Path) -> DatasetManifest:
    """Copy with every entry path made absolute relative to the manifest.

    Needed before mixing entries of manifests from different directories
    (noise injection) or writing a manifest somewhere else.
    """
    entries = [
        dataclasses.replace(
            e,
            feature_path=str(resolve_path(e.feature_path, manifest_path)),
            mask_path=str(resolve_path(e.mask_path, manifest_path)) if e.mask_path else None,
        )
        for e in manifest.entries
    ]
    return DatasetManifest(entries)


def load_dataset(manifest: DatasetManifest, manifest_path: str | Path | None = None) -> FeatureDataset:
    """Load every feature file of a manifest, order preserved.

    All files must share one (c, h, w) shape; a mismatch or missing file
    aborts the load.
    """
    manifest.validate()
    if not manifest.entries:
        raise InputError("empty dataset")
    maps = []
    for entry in manifest.entries:
        fmap = read_feature_file(resolve_path(entry.feature_path, manifest_path), entry.image_id)
        if maps and fmap.data.shape != maps[0].data.shape:
            raise InputError(
                f"shape mismatch: '{entry.image_id}' has {fmap.data.shape}, "
                f"expected {maps[0].data.shape}"
            )
        maps.append(fmap)
    array = np.stack([m.data for m in maps])
    return FeatureDataset(array, [m.image_id for m in maps])


# ---------------------------------------------------------------------------
# ground-truth masks
# ---------------------------------------------------------------------------


def read_mask(path: str | Path, height: int, width: int) -> np.ndarray:
    """Load an 8-bit grayscale mask; nonzero means anomalous pixel."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing mask: {path}")
    img = Image.open(path).convert("L")
    arr = np.asarray(img)
    if arr.shape != (height, width):
        raise InputError(f"mask {path} has shape {arr.shape}, manifest says {(height, width)}")
    return arr > 0


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    img = Image.fromarray((mask.astype(np.uint8)) * 255, mode="L")
    img.save(path)


def entry_mask(entry: ManifestEntry, manifest_path: str | Path | None = None) -> np.ndarray:
    """Ground-truth mask for a manifest entry; normal entries are all-zero."""
    if entry.mask_path is None:
        return np.zeros((entry.height, entry.width), dtype=bool)
    mask = read_mask(resolve_path(entry.mask_path, manifest_path), entry.height, entry.width)
    if entry.label != "anomalous" and mask.any():
        raise InputError(f"'{entry.image_id}' is labeled normal but its mask has nonzero pixels")
    return mask


__all__ = [
    "FeatureMap",
    "ManifestEntry",
    "DatasetManifest",
    "FeatureDataset",
    "write_feature_file",
    "read_feature_file",
    "write_score_file",
    "read_score_file",
    "read_manifest",
    "write_manifest",
    "resolve_path",
    "rebase_manifest",
    "load_dataset",
    "read_mask",
    "write_mask",
    "entry_mask",
]
