"""Loss, SGD with momentum, learning-rate schedules and the train/eval loops."""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import AugmentPolicy, LabeledDataset, augment
from .graph import Graph
from .model import Network

cross_entropy = T.cross_entropy


@dataclass
class TrainConfig:
    lr_init: float = 0.0033
    lr_peak: float = 0.01
    lr_final: float = 0.001
    warmup_epochs: int = 3
    epochs: int = 300
    momentum: float = 0.937
    weight_decay: float = 0.0005
    batch_size: int = 128
    seed: int = 0
    schedule_kind: str = "warmup-cosine"
    # step-decay only: multiply by decay_gamma at each fraction of the run
    decay_milestones: tuple[float, ...] = (0.5, 0.75)
    decay_gamma: float = 0.1
    augment: Optional[AugmentPolicy] = None

    def __post_init__(self):
        self.decay_milestones = tuple(self.decay_milestones)
        if isinstance(self.augment, dict):
            self.augment = AugmentPolicy(**self.augment)
        if min(self.lr_init, self.lr_peak, self.lr_final) <= 0:
            raise ValueError("learning rates must be > 0")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule_kind not in ("warmup-cosine", "step-decay"):
            raise ValueError(f"unknown schedule_kind {self.schedule_kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_milestones"] = list(self.decay_milestones)
        return d


# Published recipes; epochs etc. can be overridden with dataclasses.replace.
DETECTION_RECIPE = dict(
    lr_init=0.0033, lr_peak=0.01, lr_final=0.001, warmup_epochs=3,
    momentum=0.937, weight_decay=0.0005, schedule_kind="warmup-cosine",
)
TINY_IMAGENET_RECIPE = dict(
    lr_init=0.01793, lr_peak=0.01793, lr_final=0.01793 * 0.01, warmup_epochs=0, epochs=200,
    momentum=0.9447, weight_decay=0.002113, batch_size=256, schedule_kind="step-decay",
)
CIFAR10_RECIPE = dict(
    lr_init=0.1, lr_peak=0.1, lr_final=0.001, warmup_epochs=0, epochs=200,
    momentum=0.9, weight_decay=0.0001, batch_size=128, schedule_kind="step-decay",
)


def lr_at(cfg: TrainConfig, epoch: int, step_in_epoch: int, steps_per_epoch: int) -> float:
    """Learning rate for a step.

    warmup-cosine: linear ``lr_init -> lr_peak`` over the warmup steps, then
    ``lr_final + (lr_peak - lr_final) * (1 + cos(pi * t)) / 2`` with ``t`` the
    post-warmup progress, reaching 1 on the last step.

    step-decay: linear warmup (if any), then ``lr_peak`` scaled by
    ``decay_gamma`` at every milestone fraction of ``epochs`` passed.
    """
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    gs = epoch * steps_per_epoch + step_in_epoch
    warm = cfg.warmup_epochs * steps_per_epoch
    if gs < warm:
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * gs / warm
    if cfg.schedule_kind == "step-decay":
        passed = sum(epoch >= m * cfg.epochs for m in cfg.decay_milestones)
        return cfg.lr_peak * cfg.decay_gamma ** passed
    last = cfg.epochs * steps_per_epoch - 1
    if last <= warm:
        return cfg.lr_peak
    t = (gs - warm) / (last - warm)
    return cfg.lr_final + (cfg.lr_peak - cfg.lr_final) * (1 + math.cos(math.pi * t)) / 2


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def sgd_step(
    params: Sequence[tuple[str, T.Tensor]],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """In place: ``g += wd * p; v = m * v + g; p -= lr * v``."""
    for (name, p), g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        dt = p.data.dtype
        g = g + dt.type(cfg.weight_decay) * p.data
        v = state.velocity.get(name)
        v = g if v is None else dt.type(cfg.momentum) * v + g
        state.velocity[name] = v
        p.data -= dt.type(lr) * v
    state.step += 1


# --------------------------------------------------------------------------
# loops
# --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    train_loss: float
    val_top1: float
    wall_ms: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _check_compatible(net: Network, data: LabeledDataset) -> None:
    expect = net.graph.input_shape
    if data.images.shape[1:] != expect:
        raise T.ShapeError(f"dataset samples are {data.images.shape[1:]}, graph expects {expect}")
    k = net.num_classes
    if k is None:
        raise T.ShapeError("graph does not end in a single classification head")
    if data.num_classes > k:
        raise T.ShapeError(f"dataset has {data.num_classes} classes, graph head has {k}")


def evaluate(net: Network, data: LabeledDataset, batch_size: int = 256) -> float:
    """Top-1 accuracy; ties go to the lowest class index."""
    if len(data) == 0:
        return float("nan")
    correct = 0
    for i in range(0, len(data), batch_size):
        logits = net.forward(data.images[i:i + batch_size], training=False).data
        correct += int((logits.argmax(axis=1) == data.labels[i:i + batch_size]).sum())
    return correct / len(data)


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    # counter-keyed stream per epoch: reproducible regardless of earlier epochs
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(
    graph: Graph | Network,
    data: LabeledDataset,
    cfg: TrainConfig,
    val: Optional[LabeledDataset] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    log: Optional[Callable[[str], None]] = None,
):
    """Train from the config seed; returns ``(state_dict, history)``.

    Passing a :class:`Network` trains it in place (its current weights are
    the starting point); a :class:`Graph` is initialized from ``cfg.seed``.
    """
    net = graph if isinstance(graph, Network) else Network(graph, seed=cfg.seed)
    _check_compatible(net, data)
    history = TrainHistory()
    params = net.parameters()
    opt = OptimizerState()
    n = len(data)
    steps = max(1, math.ceil(n / cfg.batch_size))
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = epoch_order(cfg.seed, epoch, n)
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1])
        total, seen = 0.0, 0
        lr = cfg.lr_init
        for step in range(steps):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            x = data.images[idx]
            if cfg.augment is not None:
                x = augment(x, cfg.augment, aug_rng)
            for _, p in params:
                p.grad = None
            with T.Tape() as tape:
                loss = cross_entropy(net.forward(x, training=True), data.labels[idx])
            T.backward(tape, loss)
            lr = lr_at(cfg, epoch, step, steps)
            sgd_step(params, [p.grad for _, p in params], opt, lr, cfg)
            total += loss.item() * len(idx)
            seen += len(idx)
        val_top1 = evaluate(net, val) if val is not None else float("nan")
        rec = EpochRecord(epoch, opt.step, lr, total / seen, val_top1, (time.perf_counter() - t0) * 1000)
        history.append(rec)
        if log:
            log(f"epoch {epoch}: loss {rec.train_loss:.4f} val_top1 {val_top1:.4f} lr {lr:.5f}")
        if on_epoch:
            on_epoch(rec)
    return net.state_dict(), history


METRICS_HEADER = ("epoch", "step", "lr", "train_loss", "val_top1", "wall_ms")


def write_metrics(path, history: TrainHistory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in history:
            w.writerow([r.epoch, r.step, repr(r.lr), repr(r.train_loss), repr(r.val_top1), f"{r.wall_ms:.3f}"])


def append_eval_row(path, top1: float, wall_ms: float) -> None:
    """Evaluation results go in as an ``eval`` row with the training columns blank."""
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow(["eval", "", "", "", repr(top1), f"{wall_ms:.3f}"])


def read_metrics(path, drop_wall: bool = False) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return [r[:-1] for r in rows] if drop_wall else rows
