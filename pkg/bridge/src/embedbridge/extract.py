"""Batch embedding extraction over a folder of aligned face images.

Images are expected pre-aligned to the model's input geometry (112x112 RGB
for the ArcFace family); the bridge refuses wrong-sized inputs rather than
silently resizing, keeping embedding provenance clean. Subject and sample ids
come from the folder layout: ``root/<subject>/<sample>.png`` (files directly
under the root become single-sample subjects).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .emb1 import write_emb1
from .manifest import ExtractionManifest
from .registry import load_model

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass(frozen=True)
class ExtractionSummary:
    out: str
    model: str
    dim: int
    records: int
    skipped: int


def discover_images(root) -> list[tuple[str, str, Path]]:
    """(subject_id, sample_id, path) triples in deterministic sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"image root {root} is not a directory")
    found = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        rel = path.relative_to(root)
        if len(rel.parts) == 1:
            found.append((path.stem, "0", path))
        else:
            found.append((rel.parts[0], path.stem, path))
    return found


def _load_image(path: Path, input_size: int) -> np.ndarray:
    """Aligned RGB image to a CHW float32 tensor in [-1, 1]."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        if img.size != (input_size, input_size):
            raise ValueError(
                f"{path}: input is {img.size[0]}x{img.size[1]}, expected "
                f"{input_size}x{input_size} aligned crops (the bridge does not resize)"
            )
        arr = np.asarray(img, dtype=np.float32)
    arr = (arr / 255.0 - 0.5) / 0.5
    return arr.transpose(2, 0, 1)


def extract(manifest: ExtractionManifest) -> ExtractionSummary:
    """Run the extractor over every image and write the EMB1 file.

    Unreadable images are skipped with a warning and counted; geometry or
    embedding-dimension violations abort the run.
    """
    spec = manifest.spec()
    model = load_model(spec, manifest.weights, manifest.allow_untrained)
    images = discover_images(manifest.images)

    keys: list[tuple[str, str]] = []
    batch: list[np.ndarray] = []
    vectors: list[np.ndarray] = []
    skipped = 0

    def flush():
        if not batch:
            return
        stacked = torch.from_numpy(np.stack(batch))
        with torch.inference_mode():
            out = model(stacked)
        out = out.detach().cpu().numpy().astype(np.float32)
        if out.ndim != 2 or out.shape[1] != manifest.dim:
            raise ValueError(
                f"model produced embeddings of dimension "
                f"{out.shape[1] if out.ndim == 2 else out.shape}, manifest "
                f"declares {manifest.dim}; aborting"
            )
        vectors.append(out)
        batch.clear()

    for subject_id, sample_id, path in images:
        try:
            arr = _load_image(path, spec.input_size)
        except (OSError, UnidentifiedImageError) as exc:
            logger.warning("skipping unreadable image %s: %s", path, exc)
            skipped += 1
            continue
        keys.append((subject_id, sample_id))
        batch.append(arr)
        if len(batch) >= manifest.batch_size:
            flush()
    flush()

    matrix = np.concatenate(vectors, axis=0) if vectors else np.empty((0, manifest.dim), np.float32)
    records = [(s, i, matrix[row]) for row, (s, i) in enumerate(keys)]
    write_emb1(manifest.out, spec.name, manifest.dim, records)
    return ExtractionSummary(
        out=str(manifest.out),
        model=spec.name,
        dim=manifest.dim,
        records=len(records),
        skipped=skipped,
    )
