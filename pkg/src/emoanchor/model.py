"""Full model: configuration, parameter catalog, and the forward pass.

Parameters live in a flat dict keyed by path. Paths under ``encoder.`` belong
to the context encoder, ``sup.`` to the supervision head, and ``anc.`` to the
anchor head; :func:`emoanchor.training.param_count` filters on these
prefixes. The same declaration code yields either initialized tensors or a
shape-only catalog, so parameter budgets can be audited without allocating
full-scale weights.

Dropout uses two separate streams (encoder/supervision vs anchor
projections), so disabling the anchor branch leaves the supervision branch's
randomness untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import heads
from .encoder import EncoderConfig, encode_conversation, sinusoid_table
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_classes: int
    feature_dims: dict[str, int]
    d: int = 1280
    k: int = 1
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
    d_anc: int = 768
    proj_dropout: float = 0.4
    proj_hidden: int | None = None  # None -> (d + d_anc) / 2 rounded to a multiple of 64
    per_modality_projection: bool = False
    per_modality_gate: bool = False
    single_branch: bool = False
    use_anchor_branch: bool = True

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        missing = [m for m in self.modalities if m not in self.feature_dims]
        if missing:
            raise ValueError(f"feature_dims missing modalities {missing}")
        if self.single_branch and not self.use_anchor_branch:
            raise ValueError("single_branch layout requires the anchor projections")

    @property
    def projection_width(self) -> int:
        if self.proj_hidden is not None:
            return self.proj_hidden
        return max(64, int(round((self.d + self.d_anc) / 2 / 64)) * 64)

    @property
    def classifier_input_dim(self) -> int:
        # The single-branch layout classifies in anchor space.
        return self.d_anc if self.single_branch else self.d

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d=self.d,
            k=self.k,
            heads=self.heads,
            transformer_layers=self.transformer_layers,
            dropout=self.dropout,
            max_positions=self.max_positions,
            num_speakers=self.num_speakers,
            use_positional=self.use_positional,
            use_speaker=self.use_speaker,
            use_intra=self.use_intra,
            use_inter=self.use_inter,
            modalities=self.modalities,
            feature_dims=dict(self.feature_dims),
        )


class _ParamBuilder:
    """Declares parameters once; yields initialized tensors or shapes only."""

    def __init__(self, dtype):
        self.dtype = dtype
        self.rng: np.random.Generator | None = None
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.params: dict[str, Tensor] = {}

    def _emit(self, path: str, shape: tuple[int, ...], sample) -> None:
        if path in self.shapes:
            raise ValueError(f"parameter declared twice: {path}")
        self.shapes[path] = shape
        if self.rng is not None:
            self.params[path] = Tensor(sample(self.rng), requires_grad=True, dtype=self.dtype, name=path)

    def matrix(self, path: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        self._emit(path, (fan_in, fan_out), lambda rng: rng.uniform(-bound, bound, (fan_in, fan_out)))

    def zeros(self, path: str, dim: int) -> None:
        self._emit(path, (dim,), lambda rng: np.zeros(dim))

    def ones(self, path: str, dim: int) -> None:
        self._emit(path, (dim,), lambda rng: np.ones(dim))

    def table(self, path: str, rows: int, dim: int) -> None:
        self._emit(path, (rows, dim), lambda rng: rng.normal(0.0, 0.02, (rows, dim)))

    def linear(self, path: str, fan_in: int, fan_out: int) -> None:
        self.matrix(f"{path}.w", fan_in, fan_out)
        self.zeros(f"{path}.b", fan_out)


@dataclass
class ConvOutputs:
    """Per-conversation forward products (one row per utterance)."""

    streams: dict[str, Tensor]
    y_uni: dict[str, Tensor]
    fused: Tensor
    gate_weights: Tensor
    y_fuse: Tensor
    proj_uni: dict[str, Tensor] = field(default_factory=dict)
    proj_fuse: Tensor | None = None
    y_anc_uni: dict[str, Tensor] = field(default_factory=dict)
    y_anc_fuse: Tensor | None = None


class Model:
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.pos_table = Tensor(sinusoid_table(cfg.max_positions, cfg.d, dtype), dtype=dtype)

    # -- parameter declaration -------------------------------------------

    def _declare_transformer(self, b: _ParamBuilder, prefix: str) -> None:
        cfg = self.cfg
        for layer in range(cfg.transformer_layers):
            lp = f"{prefix}.l{layer}"
            for name in ("q", "k", "v", "o"):
                b.matrix(f"{lp}.attn.w{name}", cfg.d, cfg.d)
                b.zeros(f"{lp}.attn.b{name}", cfg.d)
            b.ones(f"{lp}.ln1.g", cfg.d)
            b.zeros(f"{lp}.ln1.b", cfg.d)
            b.matrix(f"{lp}.ff.w1", cfg.d, 2 * cfg.d)
            b.zeros(f"{lp}.ff.b1", 2 * cfg.d)
            b.matrix(f"{lp}.ff.w2", 2 * cfg.d, cfg.d)
            b.zeros(f"{lp}.ff.b2", cfg.d)
            b.ones(f"{lp}.ln2.g", cfg.d)
            b.zeros(f"{lp}.ln2.b", cfg.d)

    def _declare_main(self, b: _ParamBuilder) -> None:
        cfg = self.cfg
        for m in cfg.modalities:
            d_m = cfg.feature_dims[m]
            for j in range(2 * cfg.k + 1):
                b.matrix(f"encoder.{m}.tcb.w{j}", d_m, cfg.d)
            b.zeros(f"encoder.{m}.tcb.b", cfg.d)
        if cfg.use_speaker:
            b.table("encoder.speaker_table", cfg.num_speakers, cfg.d)
        for m in cfg.modalities:
            if cfg.use_intra:
                self._declare_transformer(b, f"encoder.{m}.intra")
                b.linear(f"encoder.{m}.gate.intra", cfg.d, cfg.d)
            if cfg.use_inter:
                for i in range(1, len(cfg.modalities)):
                    self._declare_transformer(b, f"encoder.{m}.inter{i}")
                    b.linear(f"encoder.{m}.gate.inter{i}", cfg.d, cfg.d)
            n_streams = len(cfg.modalities)  # intra + one per other modality
            b.linear(f"encoder.{m}.unify", n_streams * cfg.d, cfg.d)

        cls_in = cfg.classifier_input_dim
        for m in cfg.modalities:
            b.linear(f"sup.cls.{m}", cls_in, cfg.num_classes)
        if cfg.per_modality_gate:
            for m in cfg.modalities:
                b.linear(f"sup.gate.{m}", cfg.d, 1)
        else:
            b.matrix("sup.gate.w", cfg.d, 1)  # shared scorer: bias cancels in the softmax
        b.linear("sup.cls.fuse", cls_in, cfg.num_classes)

    def _declare_anchor(self, b: _ParamBuilder) -> None:
        cfg = self.cfg
        pw = cfg.projection_width
        if cfg.per_modality_projection:
            for m in cfg.modalities:
                b.matrix(f"anc.uni.{m}.w1", cfg.d, pw)
                b.zeros(f"anc.uni.{m}.b1", pw)
                b.matrix(f"anc.uni.{m}.w2", pw, cfg.d_anc)
                b.zeros(f"anc.uni.{m}.b2", cfg.d_anc)
        else:
            b.matrix("anc.uni.w1", cfg.d, pw)
            b.zeros("anc.uni.b1", pw)
            b.matrix("anc.uni.w2", pw, cfg.d_anc)
            b.zeros("anc.uni.b2", cfg.d_anc)
        b.matrix("anc.fuse.w1", cfg.d, pw)
        b.zeros("anc.fuse.b1", pw)
        b.matrix("anc.fuse.w2", pw, cfg.d_anc)
        b.zeros("anc.fuse.b2", cfg.d_anc)

    def init_params(
        self, rng_main: np.random.Generator, rng_anchor: np.random.Generator | None = None
    ) -> dict[str, Tensor]:
        b = _ParamBuilder(self.dtype)
        b.rng = rng_main
        self._declare_main(b)
        if self.cfg.use_anchor_branch:
            b.rng = rng_anchor if rng_anchor is not None else rng_main
            self._declare_anchor(b)
        return b.params

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        b = _ParamBuilder(self.dtype)
        self._declare_main(b)
        if self.cfg.use_anchor_branch:
            self._declare_anchor(b)
        return b.shapes

    # -- forward -----------------------------------------------------------

    def _proj_prefix(self, m: str | None) -> str:
        if m is None:
            return "anc.fuse"
        return f"anc.uni.{m}" if self.cfg.per_modality_projection else "anc.uni"

    def forward(
        self,
        params: dict[str, Tensor],
        features: dict[str, np.ndarray],
        speaker_ids: np.ndarray,
        train: bool = False,
        rng_main: np.random.Generator | None = None,
        rng_anchor: np.random.Generator | None = None,
        anchor_matrix: Tensor | None = None,
        want_anchor: bool = False,
    ) -> ConvOutputs:
        """Run one conversation through encoder and heads.

        ``want_anchor`` controls whether anchor-space projections and
        predictions are produced; evaluation never asks for them (the anchor
        head plays no part in test-time predictions in the dual-branch
        layout).
        """
        cfg = self.cfg
        if train and rng_main is None:
            raise ValueError("training-mode forward needs a dropout rng")
        rng_main = rng_main or np.random.default_rng(0)
        rng_anchor = rng_anchor or rng_main
        z = encode_conversation(
            features, speaker_ids, params, cfg.encoder_config(), self.pos_table, train, rng_main
        )
        fused, gate_weights = heads.gated_fusion(z, params, cfg.modalities, cfg.per_modality_gate)

        proj_uni: dict[str, Tensor] = {}
        proj_fuse: Tensor | None = None
        if cfg.single_branch:
            for m in cfg.modalities:
                proj_uni[m] = heads.project(
                    z[m], params, self._proj_prefix(m), cfg.proj_dropout, train, rng_anchor
                )
            proj_fuse = heads.project(fused, params, self._proj_prefix(None), cfg.proj_dropout, train, rng_anchor)
            y_uni = {m: heads.classify(proj_uni[m], params, f"sup.cls.{m}") for m in cfg.modalities}
            y_fuse = heads.classify(proj_fuse, params, "sup.cls.fuse")
        else:
            y_uni = {m: heads.classify(z[m], params, f"sup.cls.{m}") for m in cfg.modalities}
            y_fuse = heads.classify(fused, params, "sup.cls.fuse")
            if want_anchor:
                for m in cfg.modalities:
                    proj_uni[m] = heads.project(
                        z[m], params, self._proj_prefix(m), cfg.proj_dropout, train, rng_anchor
                    )
                proj_fuse = heads.project(
                    fused, params, self._proj_prefix(None), cfg.proj_dropout, train, rng_anchor
                )

        out = ConvOutputs(
            streams=z, y_uni=y_uni, fused=fused, gate_weights=gate_weights, y_fuse=y_fuse,
            proj_uni=proj_uni, proj_fuse=proj_fuse,
        )
        if want_anchor:
            if anchor_matrix is None:
                raise ValueError("want_anchor=True requires an anchor matrix")
            out.y_anc_uni = {m: heads.anchor_predict(proj_uni[m], anchor_matrix) for m in cfg.modalities}
            out.y_anc_fuse = heads.anchor_predict(proj_fuse, anchor_matrix)
        return out

    def predict_labels(self, params: dict[str, Tensor], features, speaker_ids) -> np.ndarray:
        """Test-time labels for one conversation (fusion classifier only)."""
        out = self.forward(params, features, speaker_ids, train=False, want_anchor=False)
        return heads.hard_labels(out.y_fuse)
