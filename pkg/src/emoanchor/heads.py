"""Prediction heads: label-supervised classification plus anchor projection.

The supervision side owns test-time behavior entirely: per-modality linear
classifiers, a soft gate that fuses the modality streams into one vector per
utterance, and a fusion classifier. The anchor side projects features into
the anchor embedding space and scores them against the per-class anchors by
cosine similarity; it exists only to shape training.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .anchors import anchor_distribution, anchor_scores
from .tensor import Tensor


def classify(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Linear classifier + softmax -> per-utterance distribution rows."""
    return T.softmax(T.linear(x, params[f"{prefix}.w"], params[f"{prefix}.b"]), axis=-1)


def hard_labels(distribution: Tensor) -> np.ndarray:
    """Argmax per row; ties break to the lowest class index."""
    return np.argmax(distribution.data, axis=-1)


def gated_fusion(
    streams: dict[str, Tensor],
    params: dict[str, Tensor],
    modalities: tuple[str, ...],
    per_modality_gate: bool = False,
) -> tuple[Tensor, Tensor]:
    """Convex combination of modality streams with softmax-normalized scalar
    gate scores, computed per utterance. Returns (fused, weights).

    The shared scorer carries no bias: one constant added to every modality's
    score cancels under the softmax. Per-modality scorers keep theirs."""
    scores = []
    for m in modalities:
        if per_modality_gate:
            scores.append(T.linear(streams[m], params[f"sup.gate.{m}.w"], params[f"sup.gate.{m}.b"]))
        else:
            scores.append(T.matmul(streams[m], params["sup.gate.w"]))
    weights = T.softmax(T.concat(scores, axis=1), axis=1)
    fused = None
    for i, m in enumerate(modalities):
        term = T.mul(T.narrow(weights, 1, i, i + 1), streams[m])
        fused = term if fused is None else T.add(fused, term)
    return fused, weights


def project(
    x: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    proj_dropout: float,
    train: bool,
    rng: np.random.Generator,
) -> Tensor:
    """Two-layer map into anchor space: W2 @ silu(dropout(W1 @ x))."""
    h = T.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    h = T.dropout(h, proj_dropout, rng, train)
    h = T.silu(h)
    return T.linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def anchor_predict(projected: Tensor, anchor_matrix: Tensor) -> Tensor:
    """Cosine scores against each class anchor, softmax-normalized."""
    return anchor_distribution(anchor_scores(projected, anchor_matrix))
