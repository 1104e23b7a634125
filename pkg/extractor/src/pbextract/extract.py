"""Folder-layout driven extraction: images in, SPF1 files + manifests out.

Expects the usual industrial-defect layout::

    <category>/
        train/good/*.png
        test/good/*.png
        test/<defect>/*.png
        ground_truth/<defect>/<stem>_mask.png

``train/good`` and ``test/good`` images are labeled normal, every other
test class anomalous.  Labels are recorded explicitly in the manifest,
never re-derived downstream.  Ground-truth masks go through the same
resize/crop geometry as their images so pixel-level evaluation lines up.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import PatchFeatureExtractor
from .config import ExtractorConfig
from .spf import ManifestRecord, write_manifest, write_spf1

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _images_in(folder: Path, limit: int | None) -> list[Path]:
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return files[:limit] if limit else files


def _mask_for(root: Path, class_name: str, stem: str) -> Path | None:
    gt = root / "ground_truth" / class_name
    if not gt.is_dir():
        return None
    for candidate in (gt / f"{stem}_mask.png", gt / f"{stem}.png"):
        if candidate.is_file():
            return candidate
    return None


def extract_folder(
    input_dir: str | Path, out_dir: str | Path, config: ExtractorConfig
) -> dict[str, Path]:
    """Extract every image of the category folder; returns manifest paths."""
    root = Path(input_dir)
    if not (root / "train").is_dir():
        raise ValueError(f"no train/ split under {root}")
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"
    masks_dir = out_dir / "masks"
    features_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    extractor = PatchFeatureExtractor(config)
    manifests: dict[str, Path] = {}

    for split in ("train", "test"):
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        records: list[ManifestRecord] = []
        class_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
        if not class_dirs:
            raise ValueError(f"no class folders under {split_dir}")
        for class_dir in class_dirs:
            label = "normal" if class_dir.name == "good" else "anomalous"
            paths = _images_in(class_dir, config.limit)
            for start in range(0, len(paths), config.batch_size):
                chunk = paths[start : start + config.batch_size]
                tensors = []
                for path in chunk:
                    try:
                        with Image.open(path) as img:
                            tensors.append(extractor.preprocess(img))
                    except OSError as exc:
                        raise ValueError(f"unreadable image {path}: {exc}") from exc
                feats = extractor.features(torch.stack(tensors))
                for path, fmap in zip(chunk, feats):
                    image_id = f"{split}_{class_dir.name}_{path.stem}"
                    feature_name = f"{image_id}.spf"
                    write_spf1(fmap, features_dir / feature_name)
                    mask_rel = None
                    if label == "anomalous":
                        mask_src = _mask_for(root, class_dir.name, path.stem)
                        if mask_src is not None:
                            with Image.open(mask_src) as mask_img:
                                mask = extractor.preprocess_mask(mask_img)
                            mask_rel = f"masks/{image_id}.png"
                            Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(
                                out_dir / mask_rel
                            )
                    records.append(
                        ManifestRecord(
                            feature_path=f"features/{feature_name}",
                            image_id=image_id,
                            label=label,
                            height=config.crop,
                            width=config.crop,
                            mask_path=mask_rel,
                        )
                    )
        manifest_path = out_dir / f"{split}.manifest"
        write_manifest(records, manifest_path)
        manifests[split] = manifest_path
    return manifests
