"""Training loop, evaluation, and parameter accounting.

Each run is a pure function of its seed: one seed sequence is split into
independent streams for parameter init (main and anchor head), conversation
shuffling, the two dropout streams, and anchor sampling. Keeping the anchor
head on its own init/dropout streams means runs with the anchor branch
disabled or down-weighted reproduce the supervision branch of a full run
exactly.

Batches are lists of conversations; each conversation flows through the
model independently and the losses average over all utterances in the
batch. One anchor per class is sampled per optimization step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from . import tensor as T
from .anchors import AnchorSet, SamplingPolicy
from .dataio import Conversation, Dataset
from .errors import TrainingError
from .heads import hard_labels
from .metrics import MetricsReport, compute_metrics
from .model import Model, ModelConfig
from .objective import AblationSpec, BranchInputs, LossReport, LossWeights, total_objective
from .optim import AdamW
from .tensor import Tape, Tensor


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]  # best checkpoint
    best_epoch: int
    best_metrics: MetricsReport | None
    history: list[dict]
    step_reports: list[LossReport] = field(default_factory=list)
    seconds: float = 0.0


def conversation_arrays(dataset: Dataset, conv: Conversation):
    """Feature matrices, speaker ids, and labels for one conversation."""
    rows = {m: np.array([u.rows[m] for u in conv.utterances]) for m in dataset.modalities}
    feats = {m: dataset.features[m].rows[rows[m]] for m in dataset.modalities}
    speakers = np.array([u.speaker for u in conv.utterances], dtype=np.int64)
    labels = np.array([u.label for u in conv.utterances], dtype=np.int64)
    return feats, speakers, labels


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def params_from_arrays(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}


def _check_finite(report: LossReport, step: int) -> None:
    bad = [name for name, value in report.terms.items() if not np.isfinite(value)]
    if bad or not np.isfinite(report.total):
        names = ", ".join(bad) if bad else "total"
        raise TrainingError(f"non-finite loss at step {step}: term(s) {names}")


def train_run(
    model_cfg: ModelConfig,
    train_set: Dataset,
    val_set: Dataset | None,
    anchor_set: AnchorSet | None,
    weights: LossWeights,
    spec: AblationSpec,
    *,
    q: float = 0.2,
    lr: float = 3e-4,
    weight_decay: float = 0.7,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    epochs: int = 30,
    batch_size: int = 15,
    patience: int = 10,
    seed: int = 0,
    log_stream: IO[str] | None = None,
    keep_step_reports: bool = False,
) -> TrainResult:
    started = time.perf_counter()
    if not train_set.conversations:
        raise TrainingError("training set has no conversations")
    use_anchor = model_cfg.use_anchor_branch
    if use_anchor and anchor_set is None:
        raise TrainingError(f"mode {spec.name!r} needs an anchor file but none was provided")

    streams = np.random.SeedSequence(seed).spawn(6)
    rng_init_main, rng_init_anchor, rng_shuffle, rng_drop_main, rng_drop_anchor, rng_anchor_sample = (
        np.random.default_rng(s) for s in streams
    )

    model = Model(model_cfg)
    params = model.init_params(rng_init_main, rng_init_anchor)
    policy = SamplingPolicy(q=q)

    best = snapshot(params)
    best_epoch = -1
    best_metrics: MetricsReport | None = None
    best_wf1 = -np.inf
    patience_left = patience
    history: list[dict] = []
    step_reports: list[LossReport] = []
    optimizer: AdamW | None = None

    convs = train_set.conversations
    step = 0
    for epoch in range(epochs):
        order = rng_shuffle.permutation(len(convs))
        for start in range(0, len(order), batch_size):
            batch = [convs[i] for i in order[start : start + batch_size]]
            anchor_matrix = None
            if use_anchor:
                anchor_matrix = Tensor(anchor_set.sample_step(policy, rng_anchor_sample))

            with Tape() as tape:
                uni_rows: dict[str, list[Tensor]] = {m: [] for m in model_cfg.modalities}
                fuse_rows: list[Tensor] = []
                anc_uni_rows: dict[str, list[Tensor]] = {m: [] for m in model_cfg.modalities}
                anc_fuse_rows: list[Tensor] = []
                labels_all: list[np.ndarray] = []
                for conv in batch:
                    feats, speakers, labels = conversation_arrays(train_set, conv)
                    out = model.forward(
                        params,
                        feats,
                        speakers,
                        train=True,
                        rng_main=rng_drop_main,
                        rng_anchor=rng_drop_anchor,
                        anchor_matrix=anchor_matrix,
                        want_anchor=use_anchor,
                    )
                    for m in model_cfg.modalities:
                        uni_rows[m].append(out.y_uni[m])
                    fuse_rows.append(out.y_fuse)
                    if use_anchor:
                        for m in model_cfg.modalities:
                            anc_uni_rows[m].append(out.y_anc_uni[m])
                        anc_fuse_rows.append(out.y_anc_fuse)
                    labels_all.append(labels)

                cls_inputs = BranchInputs(
                    uni={m: T.concat(uni_rows[m], axis=0) for m in model_cfg.modalities},
                    fuse=T.concat(fuse_rows, axis=0),
                )
                anc_inputs = None
                if use_anchor:
                    anc_inputs = BranchInputs(
                        uni={m: T.concat(anc_uni_rows[m], axis=0) for m in model_cfg.modalities},
                        fuse=T.concat(anc_fuse_rows, axis=0),
                    )
                try:
                    loss, report = total_objective(
                        cls_inputs, anc_inputs, np.concatenate(labels_all), weights, spec, step=step
                    )
                except ValueError as exc:
                    raise TrainingError(f"invalid loss inputs at step {step}: {exc}") from exc

            _check_finite(report, step)
            T.zero_grads(params.values())
            tape.backward(loss)
            if optimizer is None:
                # Parameters outside the objective's reach (e.g. label
                # classifiers under anchor-only training) stay frozen.
                reached = {k: p for k, p in params.items() if p.grad is not None}
                optimizer = AdamW(reached, lr=lr, weight_decay=weight_decay, beta1=beta1, beta2=beta2, eps=eps)
            optimizer.step()

            report.extra["epoch"] = epoch
            if log_stream is not None:
                log_stream.write(report.json_line() + "\n")
            if keep_step_reports:
                step_reports.append(report)
            step += 1

        if val_set is not None:
            metrics = evaluate_params(model, params, val_set)
            entry = {
                "epoch": epoch,
                "val_accuracy": metrics.accuracy,
                "val_weighted_f1": metrics.weighted_f1,
            }
            history.append(entry)
            if log_stream is not None:
                log_stream.write(f'{{"epoch": {epoch}, "val": {metrics.json_line()}}}\n')
            if metrics.weighted_f1 > best_wf1:
                best_wf1 = metrics.weighted_f1
                best = snapshot(params)
                best_epoch = epoch
                best_metrics = metrics
                patience_left = patience
            else:
                patience_left -= 1
                if patience_left <= 0:
                    break
        else:
            best = snapshot(params)
            best_epoch = epoch

    return TrainResult(
        params=best,
        best_epoch=best_epoch,
        best_metrics=best_metrics,
        history=history,
        step_reports=step_reports,
        seconds=time.perf_counter() - started,
    )


def evaluate_params(model: Model, params: dict[str, Tensor], dataset: Dataset) -> MetricsReport:
    """Metrics over a dataset; predictions come from the fusion classifier only."""
    head_classes = params["sup.cls.fuse.b"].shape[0]
    if head_classes != dataset.num_classes:
        raise TrainingError(
            f"class-count mismatch: checkpoint predicts {head_classes}, dataset has {dataset.num_classes}"
        )
    y_true: list[np.ndarray] = []
    y_pred: list[np.ndarray] = []
    for conv in dataset.conversations:
        feats, speakers, labels = conversation_arrays(dataset, conv)
        out = model.forward(params, feats, speakers, train=False, want_anchor=False)
        y_true.append(labels)
        y_pred.append(hard_labels(out.y_fuse))
    return compute_metrics(np.concatenate(y_true), np.concatenate(y_pred), dataset.classes)


def evaluate(checkpoint: dict[str, np.ndarray], dataset: Dataset, model_cfg: ModelConfig) -> MetricsReport:
    model = Model(model_cfg)
    return evaluate_params(model, params_from_arrays(checkpoint), dataset)


def anchor_alignment(
    model: Model, params: dict[str, Tensor], dataset: Dataset, anchor_set: AnchorSet
) -> float:
    """Mean cosine between projected fused features and their own class's
    center anchor (dropout off). The mechanism-level readout of how well the
    anchor branch has pulled fused features toward the anchors."""
    centers = anchor_set.center_matrix()
    total = 0.0
    count = 0
    anchor_matrix = Tensor(centers)
    for conv in dataset.conversations:
        feats, speakers, labels = conversation_arrays(dataset, conv)
        out = model.forward(
            params, feats, speakers, train=False, anchor_matrix=anchor_matrix, want_anchor=True
        )
        proj = out.proj_fuse.data
        norms = np.maximum(np.linalg.norm(proj, axis=1), 1e-8)
        c = centers[labels]
        c_norms = np.maximum(np.linalg.norm(c, axis=1), 1e-8)
        total += float(((proj * c).sum(axis=1) / (norms * c_norms)).sum())
        count += len(labels)
    return total / count


def param_count(params: dict[str, np.ndarray | tuple | Tensor]) -> dict[str, int]:
    """Exact parameter totals per component, from arrays or a shape catalog."""
    counts = {"encoder": 0, "supervision": 0, "anchor_head": 0}
    for key, value in params.items():
        if isinstance(value, tuple):
            n = int(np.prod(value)) if value else 1
        elif isinstance(value, Tensor):
            n = value.size
        else:
            n = int(np.asarray(value).size)
        if key.startswith("encoder."):
            counts["encoder"] += n
        elif key.startswith("sup."):
            counts["supervision"] += n
        elif key.startswith("anc."):
            counts["anchor_head"] += n
        else:
            raise ValueError(f"parameter path {key!r} has no known component prefix")
    counts["total"] = sum(counts.values())
    return counts
