"""Training objective: classification, anchoring, and distillation losses.

Two weighted groups are summed into the total: the supervision group
(fused + per-modality cross-entropy, plus KL distillation of each modality
prediction toward the fused prediction) and the anchor group (the same
structure computed on anchor-space cosine predictions). Teachers are
detached, so distillation never drags a teacher toward its students. All
losses are means over the utterances of a batch, which keeps the weights
batch-size independent.

Ablations are expressed as named modes: each mode picks the active term set,
the teacher of each distillation loss, and any structural config overrides,
so every ablation row is reachable by configuration alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

CLS_EPS = 1e-8


@dataclass
class LossWeights:
    cls_fuse: float = 0.5
    cls_uni: float = 0.5
    anc_fuse: float = 0.6
    anc_uni: float = 0.6
    anc_dist: float = 0.6
    dist: float = 0.9

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {value}")


@dataclass
class LossReport:
    """Scalar values of each named term plus group and overall totals."""

    step: int
    terms: dict[str, float]
    sup_total: float
    anchor_total: float
    total: float
    extra: dict[str, float] = field(default_factory=dict)

    def json_line(self) -> str:
        doc = {
            "step": self.step,
            "terms": {k: round(v, 8) for k, v in self.terms.items()},
            "sup_total": self.sup_total,
            "anchor_total": self.anchor_total,
            "total": self.total,
        }
        doc.update(self.extra)
        return json.dumps(doc)


@dataclass(frozen=True)
class AblationSpec:
    """Active loss terms, teacher assignments, and model-config overrides."""

    name: str
    terms: frozenset[str]
    dist_teacher: str = "fuse_cls"  # teacher of the classification distillation
    anc_dist_teacher: str = "fuse_anc"  # teacher of the anchoring distillation
    model_overrides: dict = field(default_factory=dict)

    @property
    def needs_anchor_branch(self) -> bool:
        return (
            bool(self.terms & {"anc_fuse", "anc_uni", "anc_dist"})
            or self.dist_teacher == "fuse_anc"
            or self.model_overrides.get("single_branch", False)
        )


_ALL_TERMS = frozenset({"cls_fuse", "cls_uni", "dist", "anc_fuse", "anc_uni", "anc_dist"})
_CLS_TERMS = frozenset({"cls_fuse", "cls_uni", "dist"})
_ANC_TERMS = frozenset({"anc_fuse", "anc_uni", "anc_dist"})

_MODES: dict[str, AblationSpec] = {
    "full": AblationSpec("full", _ALL_TERMS),
    "no-anchor-fuse": AblationSpec("no-anchor-fuse", _ALL_TERMS - {"anc_fuse"}),
    "no-anchor-uni": AblationSpec("no-anchor-uni", _ALL_TERMS - {"anc_uni"}),
    "no-anchor-dist": AblationSpec("no-anchor-dist", _ALL_TERMS - {"anc_dist"}),
    "cls-only": AblationSpec("cls-only", _CLS_TERMS, model_overrides={"use_anchor_branch": False}),
    "anchor-only": AblationSpec("anchor-only", _ANC_TERMS),
    "swap-anchor-teacher": AblationSpec("swap-anchor-teacher", _ALL_TERMS, anc_dist_teacher="fuse_cls"),
    "swap-cls-teacher": AblationSpec("swap-cls-teacher", _ALL_TERMS, dist_teacher="fuse_anc"),
    "single-branch": AblationSpec("single-branch", _ALL_TERMS, model_overrides={"single_branch": True}),
    "no-positional": AblationSpec("no-positional", _ALL_TERMS, model_overrides={"use_positional": False}),
    "no-speaker": AblationSpec("no-speaker", _ALL_TERMS, model_overrides={"use_speaker": False}),
    "no-intra": AblationSpec("no-intra", _ALL_TERMS, model_overrides={"use_intra": False}),
    "no-inter": AblationSpec("no-inter", _ALL_TERMS, model_overrides={"use_inter": False}),
}


def ablation_mode(name: str) -> AblationSpec:
    try:
        return _MODES[name]
    except KeyError:
        raise ConfigError(f"unknown ablation mode {name!r}; known: {sorted(_MODES)}") from None


def ce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over rows of -log(probs[row, label]), log clamped at 1e-8."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[-1]):
        raise ValueError(f"label out of range for {probs.shape[-1]} classes")
    picked = T.pick(probs, labels)
    return T.neg(T.mean(T.log(T.clip_min(picked, CLS_EPS))))


def distill_loss(teacher: Tensor, student: Tensor) -> Tensor:
    """Mean per-row KL(teacher || student); the teacher is detached."""
    if teacher.shape != student.shape:
        raise ValueError(f"distill shape mismatch: {teacher.shape} vs {student.shape}")
    rows = teacher.shape[0] if teacher.data.ndim > 1 else 1
    return T.scale(T.kl_div(teacher.detach(), student), 1.0 / rows)


@dataclass
class BranchInputs:
    """Distributions feeding one loss group, all shaped (batch, classes)."""

    uni: dict[str, Tensor]
    fuse: Tensor


def _weighted_group(
    inputs: BranchInputs,
    labels: np.ndarray,
    teacher: Tensor | None,
    fuse_weight: float,
    uni_weight: float,
    dist_weight: float,
    terms_on: tuple[bool, bool, bool],
    tag: str,
    term_values: dict[str, float],
) -> Tensor | None:
    fuse_on, uni_on, dist_on = terms_on
    total: Tensor | None = None

    def accumulate(t: Tensor | None, term: Tensor, weight: float) -> Tensor:
        term = T.scale(term, weight)
        return term if t is None else T.add(t, term)

    if fuse_on:
        term = ce_loss(inputs.fuse, labels)
        term_values[f"{tag}_fuse"] = term.item()
        total = accumulate(total, term, fuse_weight)
    for m in inputs.uni:
        if uni_on:
            term = ce_loss(inputs.uni[m], labels)
            term_values[f"{tag}_{m}"] = term.item()
            total = accumulate(total, term, uni_weight)
        if dist_on:
            assert teacher is not None
            term = distill_loss(teacher, inputs.uni[m])
            term_values[f"{tag}_dist_{m}"] = term.item()
            total = accumulate(total, term, dist_weight)
    return total


def supervision_total(
    inputs: BranchInputs,
    labels: np.ndarray,
    weights: LossWeights,
    spec: AblationSpec,
    teacher: Tensor | None,
    term_values: dict[str, float],
) -> Tensor | None:
    return _weighted_group(
        inputs,
        labels,
        teacher,
        weights.cls_fuse,
        weights.cls_uni,
        weights.dist,
        ("cls_fuse" in spec.terms, "cls_uni" in spec.terms, "dist" in spec.terms),
        "cls",
        term_values,
    )


def anchor_total(
    inputs: BranchInputs,
    labels: np.ndarray,
    weights: LossWeights,
    spec: AblationSpec,
    teacher: Tensor | None,
    term_values: dict[str, float],
) -> Tensor | None:
    return _weighted_group(
        inputs,
        labels,
        teacher,
        weights.anc_fuse,
        weights.anc_uni,
        weights.anc_dist,
        ("anc_fuse" in spec.terms, "anc_uni" in spec.terms, "anc_dist" in spec.terms),
        "anc",
        term_values,
    )


def total_objective(
    cls_inputs: BranchInputs,
    anc_inputs: BranchInputs | None,
    labels: np.ndarray,
    weights: LossWeights,
    spec: AblationSpec,
    step: int = 0,
    teacher_overrides: dict[str, Tensor] | None = None,
) -> tuple[Tensor, LossReport]:
    """Weighted sum of both groups, plus a per-term report for the log.

    ``teacher_overrides`` (keys ``dist`` / ``anc_dist``) replaces a
    distillation teacher with an explicit tensor. The finite-difference
    harness uses this to pin teachers to constants, which is exactly the
    detached-teacher convention expressed as a graph input.
    """
    term_values: dict[str, float] = {}
    overrides = teacher_overrides or {}

    def pick_teacher(term: str, which: str) -> Tensor:
        if term in overrides:
            return overrides[term]
        if which == "fuse_cls":
            return cls_inputs.fuse
        if anc_inputs is None:
            raise ConfigError(f"mode {spec.name!r} needs anchor predictions for its teacher")
        return anc_inputs.fuse

    dist_teacher = pick_teacher("dist", spec.dist_teacher) if "dist" in spec.terms else None
    sup = supervision_total(cls_inputs, labels, weights, spec, dist_teacher, term_values)

    anc = None
    if spec.terms & _ANC_TERMS:
        if anc_inputs is None:
            raise ConfigError(f"mode {spec.name!r} includes anchor terms but no anchor predictions were given")
        anc_teacher = pick_teacher("anc_dist", spec.anc_dist_teacher) if "anc_dist" in spec.terms else None
        anc = anchor_total(anc_inputs, labels, weights, spec, anc_teacher, term_values)

    zero = Tensor(np.zeros((), dtype=cls_inputs.fuse.data.dtype), dtype=cls_inputs.fuse.data.dtype)
    sup_t = sup if sup is not None else zero
    anc_t = anc if anc is not None else zero
    total = T.add(sup_t, anc_t)
    report = LossReport(
        step=step,
        terms=term_values,
        sup_total=sup_t.item(),
        anchor_total=anc_t.item(),
        total=total.item(),
    )
    return total, report
