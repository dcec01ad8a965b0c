"""FastAPI service wrapping the core package.

Each endpoint has a pydantic request/response pair and a plain handler
function; the CLI calls the handlers in-process by default and speaks HTTP
to a running server when asked to. Paths in requests refer to the server's
filesystem (client and server share a disk in the intended desk-scale
deployment).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .anchors import AnchorSet
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, model_config_from, weights_from
from .dataio import (
    AnchorFile,
    load_manifest,
    read_anchor_file,
    split,
    synth_generate,
    write_anchor_file,
    write_dataset,
)
from .errors import ConfigError, EmoAnchorError
from .objective import ablation_mode
from .training import evaluate, param_count, train_run
from .verification import run_gradient_suite


# ---------------------------------------------------------------------------
# synth


class SynthRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    classes: int = 6
    conversations: int = 60
    utterances: int = 20
    dims: dict[str, int] = Field(default_factory=lambda: {"T": 64, "A": 48, "V": 56})
    d_anc: int = 32
    separation: float = 8.0
    seed: int = 1
    anchors_per_class: int = 35
    out_dir: str


class SynthResponse(BaseModel):
    manifest: str
    feature_files: dict[str, str]
    anchors: str
    conversations: int
    utterances: int


def do_synth(req: SynthRequest) -> SynthResponse:
    dataset, anchors = synth_generate(
        num_classes=req.classes,
        num_conversations=req.conversations,
        utterances_per_conv=req.utterances,
        dims=req.dims,
        d_anc=req.d_anc,
        separation=req.separation,
        seed=req.seed,
        anchors_per_class=req.anchors_per_class,
    )
    written = write_dataset(req.out_dir, dataset, anchors)
    return SynthResponse(
        manifest=written["manifest"],
        feature_files={m: written[f"features:{m}"] for m in dataset.modalities},
        anchors=written["anchors"],
        conversations=len(dataset.conversations),
        utterances=dataset.num_utterances(),
    )


# ---------------------------------------------------------------------------
# anchors


class AnchorCenterRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    src: str
    dst: str


class AnchorCenterResponse(BaseModel):
    dst: str
    classes: list[str]
    d_anc: int


def do_anchor_center(req: AnchorCenterRequest) -> AnchorCenterResponse:
    anchor_set = AnchorSet.from_file(read_anchor_file(req.src))
    centers = AnchorFile(
        classes=anchor_set.classes,
        vectors={c: anchor_set.centers[c][None, :] for c in anchor_set.classes},
    )
    write_anchor_file(req.dst, centers)
    return AnchorCenterResponse(dst=req.dst, classes=anchor_set.classes, d_anc=anchor_set.dim)


class AnchorStatsRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str


class AnchorClassStats(BaseModel):
    name: str
    count: int
    d_anc: int
    mean_intra_cosine: float


class AnchorStatsResponse(BaseModel):
    classes: list[AnchorClassStats]


def do_anchor_stats(req: AnchorStatsRequest) -> AnchorStatsResponse:
    anchors = read_anchor_file(req.path)
    rows = []
    for name in anchors.classes:
        vecs = anchors.vectors[name].astype(np.float64)
        norms = np.maximum(np.linalg.norm(vecs, axis=1), 1e-8)
        unit = vecs / norms[:, None]
        n = unit.shape[0]
        if n > 1:
            gram = unit @ unit.T
            mean_cos = float((gram.sum() - n) / (n * (n - 1)))
        else:
            mean_cos = 1.0
        rows.append(
            AnchorClassStats(name=name, count=n, d_anc=vecs.shape[1], mean_intra_cosine=mean_cos)
        )
    return AnchorStatsResponse(classes=rows)


# ---------------------------------------------------------------------------
# train


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    jobs: int | None = None  # process fan-out across seeds; None = one per core


class SeedResult(BaseModel):
    seed: int
    checkpoint: str
    log: str
    best_epoch: int
    val_accuracy: float | None
    val_weighted_f1: float | None
    seconds: float


class TrainResponse(BaseModel):
    runs: list[SeedResult]
    mean_val_accuracy: float | None
    mean_val_weighted_f1: float | None


def _train_one_seed(config_json: str, seed: int) -> dict:
    cfg = RunConfig.model_validate_json(config_json)
    if cfg.data is None:
        raise ConfigError("training requires a dataset manifest (config key 'data')")
    dataset = load_manifest(cfg.data)
    spec = ablation_mode(cfg.ablation)
    anchor_set = AnchorSet.from_file(read_anchor_file(cfg.anchors)) if cfg.anchors else None
    model_cfg = model_config_from(cfg, dataset, anchor_set, spec)
    if model_cfg.use_anchor_branch and anchor_set is None:
        raise ConfigError(f"mode {cfg.ablation!r} needs an anchor file (config key 'anchors')")
    train_set, val_set, _ = split(dataset, cfg.training.split, cfg.training.split_seed)

    run_dir = Path(cfg.out_dir) / f"seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_stream:
        result = train_run(
            model_cfg,
            train_set,
            val_set,
            anchor_set if model_cfg.use_anchor_branch else None,
            weights_from(cfg),
            spec,
            q=cfg.training.q,
            lr=cfg.optimizer.lr,
            weight_decay=cfg.optimizer.weight_decay,
            beta1=cfg.optimizer.beta1,
            beta2=cfg.optimizer.beta2,
            eps=cfg.optimizer.eps,
            epochs=cfg.training.epochs,
            batch_size=cfg.training.batch_size,
            patience=cfg.training.patience,
            seed=seed,
            log_stream=log_stream,
        )
    ckpt_path = run_dir / "checkpoint.vck"
    save_checkpoint(ckpt_path, result.params)
    return {
        "seed": seed,
        "checkpoint": str(ckpt_path),
        "log": str(log_path),
        "best_epoch": result.best_epoch,
        "val_accuracy": result.best_metrics.accuracy if result.best_metrics else None,
        "val_weighted_f1": result.best_metrics.weighted_f1 if result.best_metrics else None,
        "seconds": result.seconds,
    }


def do_train(req: TrainRequest) -> TrainResponse:
    cfg = req.config
    seeds = cfg.seeds
    config_json = cfg.model_dump_json()
    if len(seeds) > 1:
        jobs = req.jobs if req.jobs is not None else min(len(seeds), os.cpu_count() or 1)
    else:
        jobs = 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_train_one_seed, [config_json] * len(seeds), seeds))
    else:
        rows = [_train_one_seed(config_json, seed) for seed in seeds]
    runs = [SeedResult(**row) for row in rows]
    accs = [r.val_accuracy for r in runs if r.val_accuracy is not None]
    wf1s = [r.val_weighted_f1 for r in runs if r.val_weighted_f1 is not None]
    return TrainResponse(
        runs=runs,
        mean_val_accuracy=float(np.mean(accs)) if accs else None,
        mean_val_weighted_f1=float(np.mean(wf1s)) if wf1s else None,
    )


# ---------------------------------------------------------------------------
# eval


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    checkpoint: str
    split: str = "test"  # train | val | test | all


class EvalResponse(BaseModel):
    classes: list[str]
    class_acc: list[float]
    class_f1: list[float]
    accuracy: float
    weighted_f1: float
    confusion: list[list[int]]


def do_eval(req: EvalRequest) -> EvalResponse:
    cfg = req.config
    if cfg.data is None:
        raise ConfigError("evaluation requires a dataset manifest (config key 'data')")
    dataset = load_manifest(cfg.data)
    spec = ablation_mode(cfg.ablation)
    anchor_set = AnchorSet.from_file(read_anchor_file(cfg.anchors)) if cfg.anchors else None
    model_cfg = model_config_from(cfg, dataset, anchor_set, spec)
    if req.split == "all":
        part = dataset
    elif req.split in ("train", "val", "test"):
        parts = dict(zip(("train", "val", "test"), split(dataset, cfg.training.split, cfg.training.split_seed)))
        part = parts[req.split]
    else:
        raise ConfigError(f"unknown split {req.split!r}; expected train, val, test, or all")
    report = evaluate(load_checkpoint(req.checkpoint), part, model_cfg)
    return EvalResponse(
        classes=report.classes,
        class_acc=[float(x) for x in report.class_acc],
        class_f1=[float(x) for x in report.class_f1],
        accuracy=report.accuracy,
        weighted_f1=report.weighted_f1,
        confusion=report.confusion.tolist(),
    )


# ---------------------------------------------------------------------------
# gradcheck


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    jobs: int | None = None


class GradcheckEntry(BaseModel):
    name: str
    max_rel_err: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    checks: list[GradcheckEntry]


def do_gradcheck(req: GradcheckRequest) -> GradcheckResponse:
    results = run_gradient_suite(req.seeds, jobs=req.jobs)
    return GradcheckResponse(
        passed=all(r.passed for r in results),
        checks=[GradcheckEntry(name=r.name, max_rel_err=r.max_rel_err, passed=r.passed) for r in results],
    )


# ---------------------------------------------------------------------------
# params


class ParamCountRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str


class ParamCountResponse(BaseModel):
    encoder: int
    supervision: int
    anchor_head: int
    total: int


def do_param_count(req: ParamCountRequest) -> ParamCountResponse:
    counts = param_count(load_checkpoint(req.checkpoint))
    return ParamCountResponse(**counts)


# ---------------------------------------------------------------------------
# app


app = FastAPI(title="emoanchor", version=__version__)


@app.exception_handler(EmoAnchorError)
async def _package_error(request: Request, exc: EmoAnchorError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/synth", response_model=SynthResponse)
def synth_endpoint(req: SynthRequest):
    return do_synth(req)


@app.post("/anchors/center", response_model=AnchorCenterResponse)
def anchor_center_endpoint(req: AnchorCenterRequest):
    return do_anchor_center(req)


@app.post("/anchors/stats", response_model=AnchorStatsResponse)
def anchor_stats_endpoint(req: AnchorStatsRequest):
    return do_anchor_stats(req)


@app.post("/train", response_model=TrainResponse)
def train_endpoint(req: TrainRequest):
    return do_train(req)


@app.post("/eval", response_model=EvalResponse)
def eval_endpoint(req: EvalRequest):
    return do_eval(req)


@app.post("/gradcheck", response_model=GradcheckResponse)
def gradcheck_endpoint(req: GradcheckRequest):
    return do_gradcheck(req)


@app.post("/params", response_model=ParamCountResponse)
def param_count_endpoint(req: ParamCountRequest):
    return do_param_count(req)
