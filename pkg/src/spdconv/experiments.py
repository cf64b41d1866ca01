"""Desk-scale strided-versus-SPD comparisons.

Both comparisons train the width-0.25 ResNet18 and its SPD counterpart on
16x16 inputs for several seeds and report test top-1 per run.  Every run
writes ``<model>_seed<k>.spdc`` and ``<model>_seed<k>.csv`` into ``out_dir``
so repeated invocations can be compared byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .builders import build_resnet18, build_resnet18_spd
from .checkpoint import save_checkpoint
from .data import AugmentPolicy, LabeledDataset, SynthSpec, balanced_subset, downsample, load_cifar10, synth_dataset
from .model import Network
from .training import TrainConfig, evaluate, train, write_metrics

MODELS = {"resnet18": build_resnet18, "resnet18-spd": build_resnet18_spd}

CIFAR_CONFIG = dict(
    lr_init=0.1, lr_peak=0.1, lr_final=0.001, warmup_epochs=0, epochs=20, momentum=0.9,
    weight_decay=5e-4, batch_size=128, schedule_kind="step-decay", augment=AugmentPolicy(0.5, 2),
)
PARITY_CONFIG = dict(
    lr_init=0.01, lr_peak=0.05, lr_final=0.001, warmup_epochs=1, epochs=15, momentum=0.9,
    weight_decay=5e-4, batch_size=64, schedule_kind="warmup-cosine",
)


@dataclass
class Comparison:
    top1: dict[str, list[float]] = field(default_factory=dict)

    def mean(self, model: str) -> float:
        return float(np.mean(self.top1[model]))


def compare(
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    cfg: dict,
    seeds=(0, 1, 2),
    width: float = 0.25,
    out_dir: Optional[Path] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Comparison:
    res = Comparison()
    for name, build in MODELS.items():
        graph = build(train_set.num_classes, width, train_set.images.shape[1:])
        res.top1[name] = []
        for seed in seeds:
            net = Network(graph, seed=seed)
            weights, hist = train(net, train_set, TrainConfig(**cfg, seed=seed), val=test_set)
            acc = evaluate(net, test_set)
            res.top1[name].append(acc)
            if out_dir is not None:
                out_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(out_dir / f"{name}_seed{seed}.spdc", weights)
                write_metrics(out_dir / f"{name}_seed{seed}.csv", hist)
            if log:
                log(f"{name} seed {seed}: top-1 {acc:.4f}")
    return res


def cifar_sets(directory) -> tuple[LabeledDataset, LabeledDataset]:
    """5,000 train / 1,000 test, class balanced, block-averaged to 16x16."""
    train_full, test_full = load_cifar10(directory)
    tr = balanced_subset(train_full, 500, seed=0)
    te = balanced_subset(test_full, 100, seed=1)
    return downsample(tr, 2), downsample(te, 2)


def parity_sets() -> tuple[LabeledDataset, LabeledDataset]:
    tr = synth_dataset(SynthSpec(1000, 4, 16, 16, "parity-grid"), seed=1)
    te = synth_dataset(SynthSpec(800, 4, 16, 16, "parity-grid"), seed=2)
    return tr, te


def cifar_comparison(directory, out_dir=None, log=None) -> Comparison:
    tr, te = cifar_sets(directory)
    return compare(tr, te, CIFAR_CONFIG, out_dir=out_dir, log=log)


def parity_comparison(out_dir=None, log=None) -> Comparison:
    tr, te = parity_sets()
    return compare(tr, te, PARITY_CONFIG, out_dir=out_dir, log=log)
