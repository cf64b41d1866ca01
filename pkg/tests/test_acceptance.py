"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are written to the terminal even without ``-s``.  Criteria 8 and 10
train 12 small networks in total (about 5 minutes on one CPU core).
"""
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from spdconv.builders import build_resnet18, build_resnet18_spd, build_yolov5_skeleton
from spdconv.catalog import resolve_graph
from spdconv.data import find_cifar10
from spdconv.experiments import cifar_comparison, parity_comparison
from spdconv.gradcheck import gradient_suite
from spdconv.graph import count_params, infer_shapes
from spdconv.rewrite import isomorphic, rewrite_spd
from spdconv.scaling import VARIANTS, scale_depth, scale_width
from spdconv.spd import depth_to_space, space_to_depth
from spdconv.tensor import ConvParams, Tensor, conv2d
from spdconv.training import TrainConfig, lr_at, read_metrics
from reference import naive_conv2d, rel_err


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail
    return emit


def test_criterion_1_losslessness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    bad = 0
    for i in range(100):
        for s in (2, 3, 4):
            n, c = rng.integers(1, 4), rng.integers(1, 5)
            hb, wb = rng.integers(1, 6, 2)
            x = rng.standard_normal((n, c, hb * s, wb * s)).astype(np.float32)
            bad += not np.array_equal(depth_to_space(space_to_depth(Tensor(x), s), s).data, x)
    dt = time.perf_counter() - t0
    verdict(1, bad == 0 and dt < 10, f"300 round trips, {bad} mismatches, {dt:.2f}s")


def test_criterion_2_permutation_coverage(verdict):
    # sub-map (x, y) holds X[x::2, y::2] at channel block y*2 + x
    ok = True
    for c in (1, 3):
        x = np.arange(c * 16, dtype=np.float64).reshape(1, c, 4, 4)
        out = space_to_depth(Tensor(x), 2).data
        ok &= out.shape == (1, 4 * c, 2, 2)
        ok &= np.array_equal(np.sort(out, axis=None), np.sort(x, axis=None))
        for ch in range(c):
            for i in range(4):
                for j in range(4):
                    blk = (j % 2) * 2 + (i % 2)
                    ok &= out[0, blk * c + ch, i // 2, j // 2] == x[0, ch, i, j]
    example = space_to_depth(Tensor(np.arange(16.0).reshape(1, 1, 4, 4)), 2).data[0].tolist()
    ok &= example == [[[0, 2], [8, 10]], [[4, 6], [12, 14]], [[1, 3], [9, 11]], [[5, 7], [13, 15]]]
    verdict(2, bool(ok), "every 4x4 element lands once at its sub-map position; 0..15 layout matches")


def test_criterion_3_gradient_suite(verdict):
    t0 = time.perf_counter()
    worst = {}
    for seed in range(5):
        for op, err in gradient_suite(seed).items():
            worst[op] = max(worst.get(op, 0.0), err)
    dt = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) <= 1e-5 and dt < 120 and len(worst) == 11
    verdict(3, ok, f"{len(worst)} ops x 5 seeds, worst {top} {worst[top]:.2e}, {dt:.1f}s")


def test_criterion_4_conv_oracle(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        n, ci, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k, stride, pad = rng.integers(1, 4), rng.integers(1, 4), rng.integers(0, 3)
        h, w = rng.integers(k, 9), rng.integers(k, 9)
        x = rng.standard_normal((n, ci, h, w))
        wt = rng.standard_normal((co, ci, k, k))
        b = rng.standard_normal(co)
        got = conv2d(Tensor(x), ConvParams(Tensor(wt), Tensor(b), int(stride), int(pad))).data
        worst = max(worst, rel_err(got, naive_conv2d(x, wt, b, stride, pad)))
    verdict(4, worst <= 1e-6, f"50 configurations, worst relative error {worst:.2e}")


def test_criterion_5_structure(verdict):
    t0 = time.perf_counter()
    r18, rep = rewrite_spd(resolve_graph("resnet18"), pool_mode="remove")
    ok_r18 = len(rep.replaced_convs) == 4 and len(rep.removed_pools) == 1 and isomorphic(r18, build_resnet18_spd())
    yolo, yrep = rewrite_spd(build_yolov5_skeleton("l", input_shape=(3, 640, 640)))
    ok_yolo = len(yrep.replaced_convs) == 7
    shapes = infer_shapes(yolo).shapes
    spatial = min(s[1] for s in shapes.values() if len(s) == 3 and not isinstance(s[0], tuple))
    dt = time.perf_counter() - t0
    ok = ok_r18 and ok_yolo and spatial == 20 and dt < 5
    verdict(5, ok, f"resnet18 {len(rep.replaced_convs)}+{len(rep.removed_pools)} isomorphic={ok_r18}, "
                   f"yolo {len(yrep.replaced_convs)} replacements, deepest map {spatial}x{spatial}, {dt:.2f}s")


def test_criterion_6_scaling(verdict):
    def nearest8(n, f):
        q = Fraction(n) * Fraction(str(f)) / 8
        return max(8, 8 * math.floor(q + Fraction(1, 2)))

    bad = []
    for v, f in VARIANTS.items():
        for n in (64, 128, 256, 512, 1024):
            if scale_width(n, f.width_factor) != nearest8(n, f.width_factor):
                bad.append((v, n))
        if scale_depth(9, f.depth_factor) != math.ceil(Fraction(9) * Fraction(str(f.depth_factor))):
            bad.append((v, 9))
    ok = not bad and scale_width(64, 0.25) == 16 and scale_depth(9, 0.33) == 3
    verdict(6, ok, f"4 variants x 5 widths + depth 9, mismatches {bad}")


def test_criterion_7_lr_endpoints(verdict):
    cfg, spe = TrainConfig(epochs=300), 97
    got = (lr_at(cfg, 0, 0, spe), lr_at(cfg, 3, 0, spe), lr_at(cfg, 299, spe - 1, spe))
    ok = all(abs(a - b) <= 1e-12 for a, b in zip(got, (0.0033, 0.01, 0.001)))
    verdict(7, ok, "start/warmup-end/final = " + " / ".join(repr(v) for v in got))


# -- training criteria -------------------------------------------------------------

@pytest.fixture(scope="module")
def parity_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("parity_a")
    return parity_comparison(out_dir=out), out


def _cifar_status():
    path = find_cifar10()
    if path is None:
        return None, "CIFAR-10 binaries not found (set CIFAR10_DIR)"
    return path, ""


def test_criterion_8_accuracy_property(verdict, parity_run, tmp_path):
    res, _ = parity_run
    base, spd = res.mean("resnet18"), res.mean("resnet18-spd")
    parity_ok = spd >= base + 0.05
    parts = [f"parity-grid baseline {base:.3f} vs SPD {spd:.3f} ({'ok' if parity_ok else 'gap < 5 points'})"]
    path, why = _cifar_status()
    if path is None:
        cifar_ok = False
        parts.append(f"CIFAR part not run: {why}")
    else:
        t0 = time.perf_counter()
        c = cifar_comparison(path, out_dir=tmp_path / "cifar")
        cb, cs = c.mean("resnet18"), c.mean("resnet18-spd")
        lowest = min(min(v) for v in c.top1.values())
        cifar_ok = lowest >= 0.35 and cs >= cb - 0.01
        parts.append(f"CIFAR baseline {cb:.3f} vs SPD {cs:.3f}, lowest run {lowest:.3f}, "
                     f"{(time.perf_counter() - t0) / 60:.1f} min")
    verdict(8, parity_ok and cifar_ok, "; ".join(parts))


def test_criterion_9_parameter_count(verdict):
    oracle = json.loads((Path(__file__).parent / "oracles" / "resnet18_spd_params.json").read_text())
    got = count_params(build_resnet18_spd(10, 1.0))
    verdict(9, got == oracle["total"], f"count_params {got} vs hand oracle {oracle['total']}")


def _same_outputs(a: Path, b: Path) -> list[str]:
    diffs = []
    for f in sorted(a.iterdir()):
        g = b / f.name
        if f.suffix == ".spdc" and f.read_bytes() != g.read_bytes():
            diffs.append(f.name)
        if f.suffix == ".csv" and read_metrics(f, drop_wall=True) != read_metrics(g, drop_wall=True):
            diffs.append(f.name)
    return diffs


def test_criterion_10_determinism(verdict, parity_run, tmp_path):
    _, first = parity_run
    parity_comparison(out_dir=tmp_path / "parity_b")
    diffs = _same_outputs(first, tmp_path / "parity_b")
    files = len(list(first.iterdir()))
    parts = [f"parity-grid rerun: {files} files, differing {diffs or 'none'}"]
    path, why = _cifar_status()
    if path is None:
        cifar_ok = False
        parts.append(f"CIFAR part not run: {why}")
    else:
        cifar_comparison(path, out_dir=tmp_path / "c1")
        cifar_comparison(path, out_dir=tmp_path / "c2")
        cdiffs = _same_outputs(tmp_path / "c1", tmp_path / "c2")
        cifar_ok = not cdiffs
        parts.append(f"CIFAR rerun differing {cdiffs or 'none'}")
    verdict(10, not diffs and files == 12 and cifar_ok, "; ".join(parts))
