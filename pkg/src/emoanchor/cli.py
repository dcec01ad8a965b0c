"""Command-line client for the service layer.

Every subcommand builds the same request model the HTTP endpoint takes and
either calls the handler in-process (default) or POSTs it to a running
server (``--server http://host:port``). Diagnostics go to stderr, data to
stdout; exit code 0 means success.
"""

from __future__ import annotations

import argparse
import sys

from pydantic import BaseModel

from . import service
from .config import RunConfig, load_config, validate_config
from .errors import EmoAnchorError


def _parse_dims(text: str) -> dict[str, int]:
    dims = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        if not value:
            raise argparse.ArgumentTypeError(f"dims entry {part!r} is not MODALITY=WIDTH")
        dims[key.strip()] = int(value)
    return dims


def _parse_seeds(text: str) -> list[int]:
    """Either a comma list ("1,2,3") or an inclusive range ("1..10")."""
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _dispatch(args, endpoint: str, request: BaseModel, handler):
    """Run in-process, or against a server when --server was given."""
    if args.server:
        import httpx

        response = httpx.post(
            args.server.rstrip("/") + endpoint, json=request.model_dump(), timeout=None
        )
        if response.status_code != 200:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise EmoAnchorError(f"server returned {response.status_code}: {detail}")
        return response.json()
    return handler(request).model_dump()


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    for field in ("data", "anchors", "out_dir", "ablation"):
        value = getattr(args, field.replace("-", "_"), None)
        if value is not None:
            updates[field] = value
    if getattr(args, "seeds", None) is not None:
        updates["seeds"] = args.seeds
    doc = cfg.model_dump()
    doc.update(updates)
    for section, names in (
        ("training", ("epochs", "batch_size", "patience", "q")),
        ("optimizer", ("lr", "weight_decay")),
    ):
        for name in names:
            value = getattr(args, name, None)
            if value is not None:
                doc[section][name] = value
    return validate_config(doc, source="command line")


def cmd_synth(args) -> int:
    request = service.SynthRequest(
        classes=args.classes,
        conversations=args.convs,
        utterances=args.utts,
        dims=args.dims,
        d_anc=args.d_anc,
        separation=args.sep,
        seed=args.seed,
        anchors_per_class=args.anchors_per_class,
        out_dir=args.out,
    )
    result = _dispatch(args, "/synth", request, service.do_synth)
    print(
        f"wrote {result['conversations']} conversations / {result['utterances']} utterances "
        f"to {result['manifest']} (+{len(result['feature_files'])} feature files, anchors at {result['anchors']})"
    )
    return 0


def cmd_anchors(args) -> int:
    if args.anchors_cmd == "center":
        request = service.AnchorCenterRequest(src=getattr(args, "in"), dst=args.out)
        result = _dispatch(args, "/anchors/center", request, service.do_anchor_center)
        print(f"wrote centers for {len(result['classes'])} classes (d_anc={result['d_anc']}) to {result['dst']}")
        return 0
    request = service.AnchorStatsRequest(path=getattr(args, "in"))
    result = _dispatch(args, "/anchors/stats", request, service.do_anchor_stats)
    for row in result["classes"]:
        print(
            f"{row['name']}: n={row['count']} d_anc={row['d_anc']} "
            f"mean_intra_cosine={row['mean_intra_cosine']:.4f}"
        )
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    request = service.TrainRequest(config=cfg, jobs=args.jobs)
    result = _dispatch(args, "/train", request, service.do_train)
    for run in result["runs"]:
        acc = f"{run['val_accuracy']:.4f}" if run["val_accuracy"] is not None else "n/a"
        wf1 = f"{run['val_weighted_f1']:.4f}" if run["val_weighted_f1"] is not None else "n/a"
        print(
            f"seed {run['seed']}: best epoch {run['best_epoch']} val ACC {acc} w-F1 {wf1} "
            f"({run['seconds']:.1f}s) -> {run['checkpoint']}"
        )
    if result["mean_val_accuracy"] is not None and len(result["runs"]) > 1:
        print(
            f"mean over {len(result['runs'])} seeds: val ACC {result['mean_val_accuracy']:.4f} "
            f"w-F1 {result['mean_val_weighted_f1']:.4f}"
        )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    request = service.EvalRequest(config=cfg, checkpoint=args.checkpoint, split=args.split)
    result = _dispatch(args, "/eval", request, service.do_eval)
    width = max(len(c) for c in result["classes"] + ["overall"]) + 2
    print(f"{'class':<{width}}{'ACC':>8}{'F1':>8}")
    for name, acc, f1 in zip(result["classes"], result["class_acc"], result["class_f1"]):
        print(f"{name:<{width}}{acc * 100:>8.2f}{f1 * 100:>8.2f}")
    print(f"{'overall':<{width}}{result['accuracy'] * 100:>8.2f}")
    print(f"{'w-F1':<{width}}{result['weighted_f1'] * 100:>8.2f}")
    return 0


def cmd_gradcheck(args) -> int:
    request = service.GradcheckRequest(seeds=args.seeds if args.seeds else [args.seed], jobs=args.jobs)
    result = _dispatch(args, "/gradcheck", request, service.do_gradcheck)
    for check in result["checks"]:
        status = "ok" if check["passed"] else "FAIL"
        print(f"{check['name']}: max_rel_err={check['max_rel_err']:.3e} [{status}]")
    if not result["passed"]:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print(f"all {len(result['checks'])} gradient checks passed")
    return 0


def cmd_params(args) -> int:
    request = service.ParamCountRequest(checkpoint=args.checkpoint)
    result = _dispatch(args, "/params", request, service.do_param_count)
    for key in ("encoder", "supervision", "anchor_head", "total"):
        print(f"{key}: {result[key]}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("emoanchor.service:app", host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emoanchor",
        description="Conversation emotion recognition with anchor-guided fusion.",
    )
    parser.add_argument("--server", default=None, help="base URL of a running service; default is in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset plus anchor file")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--convs", type=int, default=60)
    p.add_argument("--utts", type=int, default=20)
    p.add_argument("--dims", type=_parse_dims, default={"T": 64, "A": 48, "V": 56}, help="e.g. T=64,A=48,V=56")
    p.add_argument("--d-anc", type=int, default=32)
    p.add_argument("--sep", type=_nonnegative_float, default=8.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--anchors-per-class", type=int, default=35)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("anchors", help="anchor-file utilities")
    asub = p.add_subparsers(dest="anchors_cmd", required=True)
    pc = asub.add_parser("center", help="write per-class center anchors as a new anchor file")
    pc.add_argument("--in", required=True)
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_anchors)
    ps = asub.add_parser("stats", help="per-class counts and intra-class cosine")
    ps.add_argument("--in", required=True)
    ps.set_defaults(func=cmd_anchors)

    p = sub.add_parser("train", help="train one or more seeds")
    p.add_argument("--config", default=None, help="JSON or TOML run config")
    p.add_argument("--data", default=None, help="dataset manifest (overrides config)")
    p.add_argument("--anchors", default=None, help="anchor file (overrides config)")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seeds", type=_parse_seeds, default=None, help='e.g. "1,2,3" or "1..10"')
    p.add_argument("--ablation", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--q", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None, help="processes for multi-seed fan-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--anchors", default=None)
    p.add_argument("--ablation", default=None)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_parse_seeds, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts per component of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmoAnchorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
