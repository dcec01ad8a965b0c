"""Finite-difference verification suite over all ops and the full objective.

Everything runs in double precision (check mode). The objective check
differentiates the complete weighted loss of a two-utterance conversation
with respect to every model parameter, so it exercises the whole graph:
temporal convolution, attention, gating, fusion, projections, cosine
anchoring, and both distillation terms.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .gradcheck import CheckResult, fd_check
from .model import Model, ModelConfig
from .objective import BranchInputs, LossWeights, ablation_mode, total_objective
from .tensor import Tensor


def op_checks(seed: int, h: float = 1e-4, rtol: float = 1e-3) -> list[CheckResult]:
    """One FD check per differentiable operation, random shapes per seed."""
    rng = np.random.default_rng(seed)
    r = rng.normal
    results = []

    def check(name, fn, arrays):
        results.append(fd_check(fn, arrays, h=h, rtol=rtol, name=f"{name}[seed={seed}]"))

    check("matmul", lambda a, b: T.sum_(T.matmul(a, b)), [r(size=(3, 4)), r(size=(4, 2))])
    check("matmul_batched", lambda a, b: T.sum_(T.matmul(a, b)), [r(size=(2, 3, 4)), r(size=(2, 4, 3))])
    check("add_mul_broadcast", lambda a, b, c: T.mean(T.mul(T.add(a, c), b)), [r(size=(3, 5)), r(size=(3, 5)), r(size=5)])
    check("sub_neg_scale", lambda a, b: T.sum_(T.scale(T.sub(T.neg(a), b), 1.7)), [r(size=(2, 3)), r(size=(2, 3))])
    check("sigmoid", lambda a: T.mean(T.sigmoid(a)), [r(size=(4, 3))])
    check("silu", lambda a: T.mean(T.silu(a)), [r(size=(4, 3))])
    check("log_clip", lambda a: T.mean(T.log(T.clip_min(a, 1e-8))), [np.abs(r(size=(3, 3))) + 0.5])
    check("softmax", lambda a: T.sum_(T.mul(T.softmax(a, axis=1), T.softmax(a, axis=1))), [r(size=(4, 5))])
    check("layer_norm", lambda a: T.mean(T.mul(T.layer_norm(a, axis=-1), a)), [r(size=(3, 6))])
    check("mean_sum_axes", lambda a: T.add(T.sum_(T.mean(a, axis=1)), T.mean(a)), [r(size=(4, 3))])
    check("concat_narrow", lambda a, b: T.mean(T.mul(T.narrow(T.concat([a, b], axis=1), 1, 1, 4), Tensor(np.ones((3, 3)), dtype=np.float64))), [r(size=(3, 2)), r(size=(3, 3))])
    check("reshape_transpose", lambda a: T.mean(T.mul(T.transpose(T.reshape(a, (2, 3, 4)), (1, 0, 2)), T.transpose(T.reshape(a, (2, 3, 4)), (1, 0, 2)))), [r(size=(6, 4))])
    labels = rng.integers(0, 4, size=3)
    check("pick_ce", lambda a: T.neg(T.mean(T.log(T.clip_min(T.pick(T.softmax(a, axis=1), labels), 1e-8)))), [r(size=(3, 4))])
    idx = rng.integers(0, 5, size=4)
    check("embedding_lookup", lambda t: T.sum_(T.mul(T.embedding_lookup(t, idx), T.embedding_lookup(t, idx))), [r(size=(5, 3))])
    mask_seed = int(rng.integers(0, 2**31))
    check("dropout", lambda a: T.mean(T.dropout(a, 0.4, np.random.default_rng(mask_seed), train=True)), [r(size=(4, 5))])
    check("cosine_sim", lambda a, b: T.cosine_sim(a, b), [r(size=6) + 0.5, r(size=6) + 0.5])
    check("cosine_rows", lambda x, a: T.sum_(T.mul(T.cosine_rows(x, a), T.cosine_rows(x, a))), [r(size=(3, 5)), r(size=(4, 5))])
    p = rng.dirichlet(np.ones(4), size=3)
    q = rng.dirichlet(np.ones(4), size=3)
    check("kl_div", lambda lp, lq: T.kl_div(T.softmax(lp, axis=1), T.softmax(lq, axis=1)), [np.log(p), np.log(q)])
    return results


def _tiny_model_config() -> ModelConfig:
    return ModelConfig(
        num_classes=3,
        feature_dims={"T": 3, "A": 4, "V": 2},
        d=4,
        k=1,
        heads=2,
        transformer_layers=1,
        dropout=0.0,
        max_positions=8,
        num_speakers=2,
        d_anc=4,
        proj_hidden=4,
    )


def objective_check(seed: int, h: float = 1e-4, rtol: float = 1e-3) -> CheckResult:
    """FD over every parameter of the full 7-term objective (check mode).

    Distillation teachers are detached in training, so the difference
    quotient must hold them fixed: they enter the check graph as constants
    captured from the unperturbed parameters. Gradient flow INTO teachers is
    covered separately (it is asserted to be exactly zero).
    """
    cfg = _tiny_model_config()
    model = Model(cfg, dtype=np.float64)
    ss = np.random.SeedSequence(seed).spawn(3)
    params = model.init_params(np.random.default_rng(ss[0]), np.random.default_rng(ss[1]))
    rng = np.random.default_rng(ss[2])

    features = {m: rng.normal(size=(2, dim)) for m, dim in cfg.feature_dims.items()}
    speakers = np.array([0, 1])
    labels = np.array([0, 1])
    anchor_values = rng.normal(size=(cfg.num_classes, cfg.d_anc))
    weights = LossWeights()
    spec = ablation_mode("full")

    keys = list(params.keys())
    arrays = [params[k].data for k in keys]

    def forward_outputs(p):
        anchor_matrix = Tensor(anchor_values, dtype=np.float64)
        return model.forward(
            p, features, speakers, train=False, anchor_matrix=anchor_matrix, want_anchor=True
        )

    base = forward_outputs(params)
    teachers = {
        "dist": Tensor(base.y_fuse.data.copy(), dtype=np.float64),
        "anc_dist": Tensor(base.y_anc_fuse.data.copy(), dtype=np.float64),
    }

    def rebuild(*tensors: Tensor) -> Tensor:
        out = forward_outputs(dict(zip(keys, tensors)))
        cls_inputs = BranchInputs(uni=out.y_uni, fuse=out.y_fuse)
        anc_inputs = BranchInputs(uni=out.y_anc_uni, fuse=out.y_anc_fuse)
        loss, _ = total_objective(
            cls_inputs, anc_inputs, labels, weights, spec, teacher_overrides=teachers
        )
        return loss

    return fd_check(rebuild, arrays, h=h, rtol=rtol, name=f"objective[seed={seed}]")


def _suite_for_seed(seed: int, h: float, rtol: float) -> list[CheckResult]:
    results = op_checks(seed, h=h, rtol=rtol)
    results.append(objective_check(seed, h=h, rtol=rtol))
    return results


def run_gradient_suite(
    seeds: list[int], h: float = 1e-4, rtol: float = 1e-3, jobs: int | None = None
) -> list[CheckResult]:
    """The per-op checks plus the whole-objective check for each seed.

    Seeds are independent, so they fan out across processes when jobs > 1.
    """
    import os
    from concurrent.futures import ProcessPoolExecutor

    jobs = jobs if jobs is not None else min(len(seeds), os.cpu_count() or 1)
    if jobs <= 1 or len(seeds) <= 1:
        results: list[CheckResult] = []
        for seed in seeds:
            results.extend(_suite_for_seed(seed, h, rtol))
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        chunks = pool.map(_suite_for_seed, seeds, [h] * len(seeds), [rtol] * len(seeds))
    return [res for chunk in chunks for res in chunk]
