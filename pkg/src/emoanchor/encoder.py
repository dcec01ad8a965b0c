"""Per-modality context encoding for one conversation.

Pipeline per modality: temporal convolution over the utterance axis, plus
sinusoidal position and learned speaker embeddings, then three contextual
transformers (one self-attending, two attending over the other modality
streams), a sigmoid gate per stream, and a linear unification of the
concatenated gated streams back to width d. Attention is bidirectional over
the whole conversation; no causal mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d: int = 1280
    k: int = 1  # temporal half-window; kernel covers 2k+1 utterances
    heads: int = 8
    transformer_layers: int = 1
    dropout: float = 0.5
    max_positions: int = 512
    num_speakers: int = 2
    use_positional: bool = True
    use_speaker: bool = True
    use_intra: bool = True
    use_inter: bool = True
    modalities: tuple[str, ...] = ("T", "A", "V")
    feature_dims: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"hidden dim {self.d} not divisible by {self.heads} heads")
        if self.k < 0:
            raise ValueError(f"temporal half-window must be >= 0, got {self.k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def others(self, m: str) -> tuple[str, ...]:
        return tuple(x for x in self.modalities if x != m)


def sinusoid_table(max_positions: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed positional table: sin on even channels, cos on odd ones."""
    table = np.zeros((max_positions, d), dtype=np.float64)
    position = np.arange(max_positions)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: d // 2])
    return table.astype(dtype)


def temporal_conv_block(h: Tensor, params: dict[str, Tensor], prefix: str, k: int) -> Tensor:
    """1-D convolution over the utterance axis, zero-padded at the edges.

    Kernel width 2k+1; tap j has its own (d_m, d) weight, so k=0 collapses to
    a per-utterance affine map.
    """
    n = h.shape[0]
    dtype = h.data.dtype
    out = None
    if k > 0:
        pad = Tensor(np.zeros((k, h.shape[1]), dtype=dtype), dtype=dtype)
        padded = T.concat([pad, h, pad], axis=0)
    else:
        padded = h
    for j in range(2 * k + 1):
        window = T.slice_rows(padded, j, j + n) if k > 0 else padded
        term = T.matmul(window, params[f"{prefix}.w{j}"])
        out = term if out is None else T.add(out, term)
    return T.add(out, params[f"{prefix}.b"])


def add_position_speaker(
    h: Tensor,
    speaker_ids: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    pos_table: Tensor,
) -> Tensor:
    n = h.shape[0]
    out = h
    if cfg.use_positional:
        if n > pos_table.shape[0]:
            raise ShapeError(f"conversation length {n} exceeds max_positions {pos_table.shape[0]}")
        out = T.add(out, T.slice_rows(pos_table, 0, n))
    if cfg.use_speaker:
        speaker_ids = np.asarray(speaker_ids)
        if speaker_ids.size and speaker_ids.max() >= cfg.num_speakers:
            raise ShapeError(f"speaker id {int(speaker_ids.max())} out of range for {cfg.num_speakers} speakers")
        out = T.add(out, T.embedding_lookup(params["encoder.speaker_table"], speaker_ids))
    return out


def multi_head_attention(
    query: Tensor,
    context: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    heads: int,
) -> Tensor:
    """softmax(QK^T / sqrt(d_head)) V with per-head projections."""
    n, d = query.shape
    nc = context.shape[0]
    dh = d // heads
    q = T.linear(query, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = T.linear(context, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = T.linear(context, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    qh = T.transpose(T.reshape(q, (n, heads, dh)), (1, 0, 2))
    kh = T.transpose(T.reshape(k, (nc, heads, dh)), (1, 0, 2))
    vh = T.transpose(T.reshape(v, (nc, heads, dh)), (1, 0, 2))
    scores = T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    mixed = T.reshape(T.transpose(T.matmul(attn, vh), (1, 0, 2)), (n, d))
    return T.linear(mixed, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _layer_norm_affine(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return T.add(T.mul(T.layer_norm(x, axis=-1), params[f"{prefix}.g"]), params[f"{prefix}.b"])


def contextual_transformer(
    query: Tensor,
    context: Tensor,
    params: dict[str, Tensor],
    prefix: str,
    cfg: EncoderConfig,
    train: bool,
    rng: np.random.Generator,
) -> Tensor:
    """Attention + feed-forward block(s); queries from the first stream,
    keys/values from the second. Passing the same stream twice is exactly
    self-attention."""
    x = query
    for layer in range(cfg.transformer_layers):
        lp = f"{prefix}.l{layer}"
        attn = multi_head_attention(x, context, params, f"{lp}.attn", cfg.heads)
        attn = T.dropout(attn, cfg.dropout, rng, train)
        x = _layer_norm_affine(T.add(x, attn), params, f"{lp}.ln1")
        ff = T.linear(x, params[f"{lp}.ff.w1"], params[f"{lp}.ff.b1"])
        ff = T.silu(ff)
        ff = T.linear(ff, params[f"{lp}.ff.w2"], params[f"{lp}.ff.b2"])
        ff = T.dropout(ff, cfg.dropout, rng, train)
        x = _layer_norm_affine(T.add(x, ff), params, f"{lp}.ln2")
    return x


def gate_stream(z: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """sigmoid(W z + b) elementwise-scales its own stream."""
    return T.mul(T.sigmoid(T.linear(z, params[f"{prefix}.w"], params[f"{prefix}.b"])), z)


def unify_modality(streams: list[Tensor], params: dict[str, Tensor], prefix: str) -> Tensor:
    stacked = T.concat(streams, axis=1) if len(streams) > 1 else streams[0]
    return T.linear(stacked, params[f"{prefix}.w"], params[f"{prefix}.b"])


def encode_conversation(
    features: dict[str, np.ndarray],
    speaker_ids: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    pos_table: Tensor,
    train: bool,
    rng: np.random.Generator,
) -> dict[str, Tensor]:
    """Full per-modality encoding of one conversation; returns N x d streams."""
    dtype = pos_table.data.dtype
    enhanced: dict[str, Tensor] = {}
    for m in cfg.modalities:
        h = Tensor(np.asarray(features[m], dtype=dtype), dtype=dtype)
        tilde = temporal_conv_block(h, params, f"encoder.{m}.tcb", cfg.k)
        enhanced[m] = add_position_speaker(tilde, speaker_ids, params, cfg, pos_table)

    unified: dict[str, Tensor] = {}
    for m in cfg.modalities:
        streams: list[Tensor] = []
        if cfg.use_intra:
            zt = contextual_transformer(enhanced[m], enhanced[m], params, f"encoder.{m}.intra", cfg, train, rng)
            streams.append(gate_stream(zt, params, f"encoder.{m}.gate.intra"))
        else:
            streams.append(enhanced[m])
        for i, other in enumerate(cfg.others(m), start=1):
            if cfg.use_inter:
                zt = contextual_transformer(
                    enhanced[m], enhanced[other], params, f"encoder.{m}.inter{i}", cfg, train, rng
                )
                streams.append(gate_stream(zt, params, f"encoder.{m}.gate.inter{i}"))
            else:
                streams.append(enhanced[m])
        unified[m] = unify_modality(streams, params, f"encoder.{m}.unify")
    return unified
