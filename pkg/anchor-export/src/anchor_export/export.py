"""Image manifest handling and the export pipeline."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .vea import VeaError, write_anchor_file


class ManifestError(ValueError):
    pass


def load_image_manifest(path: str | Path) -> dict[str, list[Path]]:
    """JSON mapping of class name to image paths (relative to the manifest)."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"image manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not doc:
        raise ManifestError(f"{path}: expected a non-empty object of class -> [image paths]")
    manifest: dict[str, list[Path]] = {}
    missing: list[str] = []
    for name, entries in doc.items():
        if not isinstance(entries, list) or not entries:
            raise ManifestError(f"{path}: class {name!r} has no images")
        resolved = []
        for entry in entries:
            image_path = Path(entry)
            if not image_path.is_absolute():
                image_path = path.parent / image_path
            if not image_path.exists():
                missing.append(f"{name}: {image_path}")
            resolved.append(image_path)
        manifest[name] = resolved
    if missing:
        raise ManifestError(f"{path}: missing image files:\n  " + "\n  ".join(missing))
    return manifest


def export(manifest: dict[str, list[Path]], encoder, out_path: str | Path, batch_size: int = 16) -> dict:
    """Encode every image, grouped per class, and write one VEA1 file.

    Images are loaded and encoded up front; the output file is written
    atomically at the end, so a failed run never leaves partial output.
    """
    classes = list(manifest.keys())
    vectors: dict[str, np.ndarray] = {}
    failures: list[str] = []
    for name in classes:
        images = []
        for image_path in manifest[name]:
            try:
                with Image.open(image_path) as im:
                    images.append(im.convert("RGB"))
            except (UnidentifiedImageError, OSError) as exc:
                failures.append(f"{name}: {image_path}: {exc}")
        if failures:
            continue
        chunks = [
            encoder.encode_batch(images[i : i + batch_size])
            for i in range(0, len(images), batch_size)
        ]
        vectors[name] = np.concatenate(chunks, axis=0)
    if failures:
        raise ManifestError("unreadable images:\n  " + "\n  ".join(failures))
    try:
        write_anchor_file(out_path, classes, vectors)
    except VeaError as exc:
        raise ManifestError(str(exc)) from exc
    return {
        "out": str(out_path),
        "encoder": encoder.name,
        "d_anc": encoder.dim,
        "classes": {name: int(vectors[name].shape[0]) for name in classes},
    }
