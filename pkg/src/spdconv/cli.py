"""``spdconv`` command line: train, eval, rewrite, inspect, gradcheck.

Exit status: 0 success, 2 configuration error, 3 data error, 4 gradient
check failure.

A run config is a JSON object (see ``CONFIG_SCHEMA``)::

    {
      "graph": "resnet18-spd",              # bundled name or .graph path
      "model": {"arch": "resnet18-spd", "num_classes": 4, "width_multiplier": 0.25},
      "input": [3, 16, 16],
      "data": {"source": "synthetic", "kind": "parity-grid", "n": 1000, "n_test": 800,
               "classes": 4, "h": 16, "w": 16, "seed": 1},
      "train": {"epochs": 15, "lr_peak": 0.05, ...},     # TrainConfig fields
      "out_dir": "runs/parity"
    }

Either ``graph`` or ``model`` selects the network.  Flags given on the
command line override the file.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .builders import BUILDERS
from .catalog import resolve_graph
from .checkpoint import CheckpointError, check_compatible, load_checkpoint, save_checkpoint
from .data import (
    AugmentPolicy,
    DataError,
    LabeledDataset,
    SynthSpec,
    balanced_subset,
    downsample,
    load_cifar10,
    standardize,
    synth_dataset,
)
from .graph import GraphError, format_graph, infer_shapes, shape_table
from .gradcheck import gradient_suite
from .model import Network
from .rewrite import rewrite_spd
from .tensor import ShapeError
from .training import TrainConfig, append_eval_row, evaluate, train, write_metrics

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4


class ConfigError(Exception):
    pass


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "graph": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["arch"],
            "properties": {
                "arch": {"enum": sorted(BUILDERS)},
                "num_classes": {"type": "integer", "minimum": 2},
                "width_multiplier": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "input": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
        "data": {
            "type": "object",
            "required": ["source"],
            "additionalProperties": False,
            "properties": {
                "source": {"enum": ["cifar10", "synthetic"]},
                "path": {"type": "string"},
                "train_per_class": {"type": "integer", "minimum": 1},
                "test_per_class": {"type": "integer", "minimum": 1},
                "subset_seed": {"type": "integer"},
                "downsample": {"type": "integer", "minimum": 1},
                "standardize": {"type": "boolean"},
                "kind": {"enum": ["separable", "parity-grid"]},
                "n": {"type": "integer", "minimum": 1},
                "n_test": {"type": "integer", "minimum": 1},
                "classes": {"type": "integer", "minimum": 2},
                "h": {"type": "integer", "minimum": 1},
                "w": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
        "train": {"type": "object"},
        "out_dir": {"type": "string"},
        "checkpoint": {"type": "string"},
    },
}


# --------------------------------------------------------------------------
# config assembly
# --------------------------------------------------------------------------

def _parse_input(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"--input must look like 3x64x64, got {text!r}")
    return dims


def load_config(args) -> dict:
    cfg: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if getattr(args, "graph", None):
        cfg["graph"] = args.graph
        cfg.pop("model", None)
    if getattr(args, "input", None):
        cfg["input"] = list(_parse_input(args.input))
    if getattr(args, "data_dir", None):
        cfg.setdefault("data", {"source": "cifar10"})["path"] = args.data_dir
    if getattr(args, "out", None):
        cfg["out_dir"] = args.out
    if getattr(args, "checkpoint", None):
        cfg["checkpoint"] = args.checkpoint
    tr = cfg.setdefault("train", {})
    for key in ("epochs", "seed", "batch_size", "lr_init", "lr_peak", "lr_final", "warmup_epochs",
                "momentum", "weight_decay", "schedule_kind"):
        v = getattr(args, key, None)
        if v is not None:
            tr[key] = v
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    return cfg


def build_graph(cfg: dict):
    if "model" in cfg:
        m = cfg["model"]
        kwargs = {k: m[k] for k in ("num_classes", "width_multiplier") if k in m}
        if "input" in cfg:
            kwargs["input_shape"] = tuple(cfg["input"])
        return BUILDERS[m["arch"]](**kwargs)
    if "graph" not in cfg:
        raise ConfigError("config names neither a graph nor a model")
    try:
        g = resolve_graph(cfg["graph"])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    return g.with_input_shape(tuple(cfg["input"])) if "input" in cfg else g


def build_train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict(cfg.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None


def load_data(cfg: dict) -> tuple[LabeledDataset, LabeledDataset]:
    d = cfg.get("data")
    if d is None:
        raise ConfigError("config has no data section")
    if d["source"] == "cifar10":
        if "path" not in d:
            raise ConfigError("data.path is required for cifar10")
        train_set, test_set = load_cifar10(d["path"])
        if "train_per_class" in d:
            train_set = balanced_subset(train_set, d["train_per_class"], d.get("subset_seed", 0))
        if "test_per_class" in d:
            test_set = balanced_subset(test_set, d["test_per_class"], d.get("subset_seed", 0) + 1)
    else:
        try:
            base = dict(classes=d.get("classes", 4), h=d.get("h", 16), w=d.get("w", 16), kind=d.get("kind", "separable"))
            train_set = synth_dataset(SynthSpec(n=d.get("n", 1000), **base), d.get("seed", 0))
            test_set = synth_dataset(SynthSpec(n=d.get("n_test", 400), **base), d.get("seed", 0) + 1)
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from None
    factor = d.get("downsample", 1)
    try:
        train_set, test_set = downsample(train_set, factor), downsample(test_set, factor)
    except ValueError as exc:
        raise ConfigError(f"data.downsample: {exc}") from None
    if d.get("standardize"):
        train_set, mean, std = standardize(train_set)
        test_set, _, _ = standardize(test_set, mean, std)
    return train_set, test_set


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args)
    graph = build_graph(cfg)
    tcfg = build_train_config(cfg)
    out = Path(cfg.get("out_dir", "runs/latest"))
    train_set, test_set = load_data(cfg)
    if train_set.images.shape[1:] != graph.input_shape:
        raise ConfigError(f"data samples are {train_set.images.shape[1:]} but the graph input is {graph.input_shape}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({**cfg, "train": tcfg.to_dict()}, indent=2, default=_jsonable) + "\n")
    (out / "model.graph").write_text(format_graph(graph))
    log = (lambda m: print(m, file=sys.stderr)) if not args.quiet else None
    weights, hist = train(graph, train_set, tcfg, val=test_set, log=log)
    ckpt = Path(cfg.get("checkpoint", out / "checkpoint.spdc"))
    save_checkpoint(ckpt, weights)
    write_metrics(out / "metrics.csv", hist)
    last = hist.records[-1].val_top1 if len(hist) else float("nan")
    print(json.dumps({"checkpoint": str(ckpt), "metrics": str(out / "metrics.csv"), "epochs": len(hist), "val_top1": last}))
    return EXIT_OK


def _jsonable(o):
    if isinstance(o, AugmentPolicy):
        return asdict(o)
    raise TypeError(type(o).__name__)


def cmd_eval(args) -> int:
    cfg = load_config(args)
    graph = build_graph(cfg)
    if "checkpoint" not in cfg:
        raise ConfigError("eval needs --checkpoint")
    net = Network(graph)
    try:
        weights = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}") from None
    check_compatible(weights, net.state_dict())
    net.load_state_dict(weights)
    _, test_set = load_data(cfg)
    t0 = time.perf_counter()
    top1 = evaluate(net, test_set)
    ms = (time.perf_counter() - t0) * 1000
    metrics = Path(args.metrics) if args.metrics else Path(cfg.get("out_dir", Path(cfg["checkpoint"]).parent)) / "metrics.csv"
    append_eval_row(metrics, top1, ms)
    print(f"top1 {top1:.4f}")
    return EXIT_OK


def cmd_rewrite(args) -> int:
    cfg = load_config(args)
    graph = build_graph(cfg)
    out_graph, report = rewrite_spd(graph, pool_mode=args.pool_mode, pool_kernel=args.pool_kernel, spd_mode=args.spd_mode)
    text = json.dumps(report.to_dict(), indent=2)
    if args.output:
        Path(args.output).write_text(format_graph(out_graph))
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    cfg = load_config(args)
    graph = infer_shapes(build_graph(cfg))
    rows = shape_table(graph)
    if args.json:
        print(json.dumps([{"node": i, "op": op, "shape": list(_flat(s)), "params": p} for i, op, s, p in rows], indent=2))
        return EXIT_OK
    wid = max(len(r[0]) for r in rows)
    print(f"{'node':<{wid}}  {'op':<16} {'shape':<20} {'params':>10}")
    for node_id, op, shape, params in rows:
        print(f"{node_id:<{wid}}  {op:<16} {_fmt_shape(shape):<20} {params:>10}")
    print(f"total parameters: {sum(r[3] for r in rows)}")
    return EXIT_OK


def _flat(shape):
    return shape if not shape or not isinstance(shape[0], tuple) else [list(s) for s in shape]


def _fmt_shape(shape) -> str:
    if shape and isinstance(shape[0], tuple):
        return " ".join(_fmt_shape(s) for s in shape)
    return "x".join(str(d) for d in shape)


def cmd_gradcheck(args) -> int:
    worst: dict[str, float] = {}
    for seed in range(args.seeds):
        for op, err in gradient_suite(seed, eps=args.eps).items():
            worst[op] = max(worst.get(op, 0.0), err)
    failed = 0
    for op, err in worst.items():
        ok = err <= args.tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {op:<16} max_rel_err={err:.3e}")
    return EXIT_OK if not failed else EXIT_VERIFY


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common(p, graph_required=False):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--graph", required=False, help="graph file or bundled graph name")
    p.add_argument("--input", help="override input shape, e.g. 3x64x64")


def _train_flags(p):
    p.add_argument("--data-dir", help="CIFAR-10 binary directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-init", type=float)
    p.add_argument("--lr-peak", type=float)
    p.add_argument("--lr-final", type=float)
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--schedule-kind", choices=["warmup-cosine", "step-decay"])


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spdconv", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a graph; writes checkpoint and metrics.csv")
    _common(p)
    _train_flags(p)
    p.add_argument("--checkpoint", help="checkpoint path (default <out>/checkpoint.spdc)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 of a checkpoint on the configured test set")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint")
    p.add_argument("--metrics", help="metrics.csv to append to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rewrite", help="replace strided convs/pools with SPD + stride-1 conv")
    _common(p)
    p.add_argument("--pool-mode", choices=["spd", "remove", "keep"], default="spd")
    p.add_argument("--pool-kernel", type=int, default=3)
    p.add_argument("--spd-mode", choices=["strict", "pad"], default="strict")
    p.add_argument("-o", "--output", help="write the rewritten graph here")
    p.add_argument("--report", help="write the report JSON here as well")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("inspect", help="per-node output shape and parameter table")
    _common(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphError, ShapeError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
