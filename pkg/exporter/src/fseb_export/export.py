"""Batch-embed a class-labeled image directory into an FSEB store.

The input directory holds one subfolder per class.  Every image is resized
to 224x224 and standardized per image to zero mean and unit variance, then
pushed through the frozen backbone; the pooled features become the stored
embedding.  A JSON label manifest is written next to the store so the
training engine can join vectors with classes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image

from .backbones import build_extractor, feature_dim
from .fseb import write_store

log = logging.getLogger("fseb_export")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff", ".webp"}
TARGET_SIZE = (224, 224)
MANIFEST_SCHEMA_VERSION = 1


@dataclass
class ExportJob:
    backbone: str
    input_dir: Path
    output_path: Path
    weights: str = "pretrained"     # or "random" (seeded, for offline runs)
    seed: int = 0
    batch_size: int = 16
    manifest_path: Path | None = None

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output_path = Path(self.output_path)
        if self.manifest_path is None:
            self.manifest_path = self.output_path.with_suffix(".labels.json")
        else:
            self.manifest_path = Path(self.manifest_path)


@dataclass
class ExportResult:
    count: int
    dim: int
    provenance: str
    classes: dict[int, str]
    skipped: list[dict] = field(default_factory=list)


def _scan_images(input_dir: Path) -> list[tuple[str, int, Path]]:
    """(sample-id, class-id, path) per image; classes = sorted subfolders."""
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {input_dir}")
    class_dirs = sorted(d for d in input_dir.iterdir() if d.is_dir())
    entries = []
    for cid, cdir in enumerate(class_dirs):
        for path in sorted(cdir.iterdir()):
            if path.suffix.lower() in IMAGE_SUFFIXES:
                entries.append((str(path.relative_to(input_dir)), cid, path))
    if not entries:
        raise ValueError(f"no samples found under {input_dir}")
    return entries


def load_and_standardize(path: Path) -> np.ndarray:
    """[3, 224, 224] float32, per-image zero mean and unit variance."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize(TARGET_SIZE, Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    std = float(arr.std())
    arr = (arr - arr.mean()) / (std if std > 0 else 1.0)
    return arr.transpose(2, 0, 1)


def export_embeddings(job: ExportJob) -> ExportResult:
    entries = _scan_images(job.input_dir)
    extractor, weight_tag = build_extractor(job.backbone, job.weights, job.seed)
    dim = feature_dim(extractor)
    provenance = (f"torchvision-{torchvision.__version__} {job.backbone} "
                  f"{weight_tag} gap-penultimate")

    vectors: dict[str, np.ndarray] = {}
    kept: list[tuple[str, int]] = []
    skipped: list[dict] = []
    batch_arrays: list[np.ndarray] = []
    batch_meta: list[tuple[str, int]] = []

    def flush():
        if not batch_arrays:
            return
        stack = torch.from_numpy(np.stack(batch_arrays))
        with torch.no_grad():
            features = extractor(stack).numpy().astype(np.float32)
        for (sid, cid), vec in zip(batch_meta, features):
            vectors[sid] = vec
            kept.append((sid, cid))
        batch_arrays.clear()
        batch_meta.clear()

    for sid, cid, path in entries:
        try:
            batch_arrays.append(load_and_standardize(path))
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            skipped.append({"id": sid, "reason": str(exc)})
            continue
        batch_meta.append((sid, cid))
        if len(batch_arrays) >= job.batch_size:
            flush()
    flush()
    if not vectors:
        raise ValueError(f"no samples found: all {len(entries)} images "
                         f"under {job.input_dir} were unreadable")

    write_store(job.output_path, vectors, dim, provenance)
    class_dirs = sorted(d.name for d in job.input_dir.iterdir() if d.is_dir())
    classes = {cid: name for cid, name in enumerate(class_dirs)}
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "backbone": job.backbone,
        "weights": weight_tag,
        "provenance": provenance,
        "classes": {str(cid): name for cid, name in classes.items()},
        "samples": [{"id": sid, "class": cid} for sid, cid in kept],
        "skipped": skipped,
    }
    with open(job.manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    log.info("exported %d embeddings (dim %d) to %s", len(vectors), dim,
             job.output_path)
    return ExportResult(count=len(vectors), dim=dim, provenance=provenance,
                        classes=classes, skipped=skipped)
