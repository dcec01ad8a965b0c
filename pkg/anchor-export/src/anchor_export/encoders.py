"""Frozen image encoders.

The four production encoders are CLIP vision towers loaded through
``transformers`` (an optional dependency; weights must be available
locally or downloadable). ``debug-hash-<dim>`` is a deterministic offline
stand-in that derives an embedding from a hash of the raw pixels; it lets
the pipeline and file format be exercised without model weights and backs
the golden interop test.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

ENCODERS = {
    "vit-b-16": ("openai/clip-vit-base-patch16", 512),
    "vit-b-32": ("openai/clip-vit-base-patch32", 512),
    "vit-l-14": ("openai/clip-vit-large-patch14", 768),
    "vit-l-14-336": ("openai/clip-vit-large-patch14-336", 768),
}

_DEBUG_PREFIX = "debug-hash-"


class EncoderError(RuntimeError):
    pass


class HashEncoder:
    """Deterministic stand-in: sha256 of the RGB pixel buffer seeds an rng."""

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderError(f"debug encoder width must be >= 1, got {dim}")
        self.name = f"{_DEBUG_PREFIX}{dim}"
        self.dim = dim

    def encode_batch(self, images: list[Image.Image]) -> np.ndarray:
        out = np.empty((len(images), self.dim), dtype=np.float32)
        for i, image in enumerate(images):
            rgb = image.convert("RGB")
            digest = hashlib.sha256()
            digest.update(f"{rgb.width}x{rgb.height}".encode())
            digest.update(rgb.tobytes())
            seed = int.from_bytes(digest.digest()[:8], "little")
            out[i] = np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)
        return out


class ClipImageEncoder:
    """CLIP vision tower; embeddings are the projected image features,
    stored without any extra normalization."""

    def __init__(self, name: str, model_id: str, dim: int):
        try:
            import torch
            from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection
        except ImportError as exc:
            raise EncoderError(
                f"encoder {name!r} needs the optional [clip] dependencies (torch, transformers)"
            ) from exc
        try:
            self._processor = CLIPImageProcessor.from_pretrained(model_id)
            self._model = CLIPVisionModelWithProjection.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(f"cannot load weights for encoder {name!r} ({model_id}): {exc}") from exc
        self._model.eval()
        self._torch = torch
        self.name = name
        self.dim = dim

    def encode_batch(self, images: list[Image.Image]) -> np.ndarray:
        inputs = self._processor(images=[im.convert("RGB") for im in images], return_tensors="pt")
        with self._torch.no_grad():
            features = self._model(**inputs).image_embeds
        out = features.cpu().numpy().astype(np.float32)
        if out.shape[1] != self.dim:
            raise EncoderError(f"encoder {self.name!r} produced width {out.shape[1]}, expected {self.dim}")
        return out


def load_encoder(name: str):
    if name.startswith(_DEBUG_PREFIX):
        try:
            dim = int(name[len(_DEBUG_PREFIX):])
        except ValueError:
            raise EncoderError(f"bad debug encoder name {name!r}; expected {_DEBUG_PREFIX}<dim>") from None
        return HashEncoder(dim)
    if name not in ENCODERS:
        known = sorted(ENCODERS) + [f"{_DEBUG_PREFIX}<dim>"]
        raise EncoderError(f"unknown encoder {name!r}; available: {', '.join(known)}")
    model_id, dim = ENCODERS[name]
    return ClipImageEncoder(name, model_id, dim)
