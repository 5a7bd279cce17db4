"""Acceptance gate: one test per fixed criterion, one printed verdict each.

Each test prints exactly one ``ACCEPTANCE Cn <name> ... PASS|FAIL`` line
with the measured numbers (conftest replays the lines in the terminal
summary so they are visible without -s) and then asserts.  Tolerances and
protocols here are contracts, not knobs: do not loosen them to make a
failing build green.  C4 and C5 share one full training run through a
module-scoped fixture.
"""

import os
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

import conftest
import test_acm
import test_metrics
import test_tensor
from test_cli import run_cli

from sacnet import tensor as T
from sacnet.acm import AcmLevelParams, acm_forward, build_window_grid, correlation
from sacnet.afsm import AfsmStageParams, afsm_forward, deformable_conv
from sacnet.datagen import gen_pairs
from sacnet.losses import bce_loss, dice_loss, smoothness_loss, total_loss
from sacnet.metrics import e_measure_curve, mae, pr_curve, s_measure, weighted_f
from sacnet.network import (SACNet, SACNetConfig, ablation_config,
                            end_to_end_grad_check, nudge_offsets)
from sacnet.train import iou, train_toy


def _verdict(tag, ok, detail):
    line = f"ACCEPTANCE {tag} {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    conftest.acceptance_lines.append(line)
    assert ok, line


def _leaf(shape, seed, lo=None):
    data = np.random.default_rng(seed).normal(size=shape)
    if lo is not None:
        data = np.abs(data) + lo
    return T.Tensor(data, requires_grad=True)


def _w(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


# ------------------------------------------------------ C1 gradient suite

def _op_checks():
    """One gradient check per differentiable op in the tensor core."""
    a, b = _leaf((3, 4), 1), _leaf((3, 4), 2)
    pos = _leaf((3, 4), 3, lo=0.5)
    off_zero = T.Tensor(np.where(a.data < 0, a.data - 0.3, a.data + 0.3),
                        requires_grad=True)          # away from relu kink
    inner = T.Tensor(np.random.default_rng(4).uniform(-0.7, 0.7, (3, 4)),
                     requires_grad=True)             # away from clip bounds
    m1, m2 = _leaf((3, 4), 5), _leaf((4, 2), 6)
    bm1, bm2 = _leaf((2, 3, 4), 7), _leaf((2, 4, 2), 8)
    x = _leaf((2, 6, 6), 9)
    k = _leaf((3, 2, 3, 3), 10)
    kb = _leaf((3,), 11)
    g_i = np.random.default_rng(12).uniform(0.3, 4.2, (2, 3, 3))
    g_j = np.random.default_rng(13).uniform(0.3, 4.2, (2, 3, 3))
    origins = np.array([[0, 0], [2, 3], [4, 4]])
    win = _leaf((3, 9, 2), 14)

    return [
        ("add", lambda: T.grad_check(lambda a, b: ((a + b) * _w((3, 4), 20)).sum(), [a, b])),
        ("sub", lambda: T.grad_check(lambda a, b: ((a - b) * _w((3, 4), 21)).sum(), [a, b])),
        ("mul", lambda: T.grad_check(lambda a, b: ((a * b) * _w((3, 4), 22)).sum(), [a, b])),
        ("div", lambda: T.grad_check(lambda a, p: ((a / p) * _w((3, 4), 23)).sum(), [a, pos])),
        ("scalar-ops", lambda: T.grad_check(
            lambda p: (((2.0 - p) * 1.5 + 0.7) / (1.0 / p) * _w((3, 4), 24)).sum(), [pos])),
        ("neg", lambda: T.grad_check(lambda a: ((-a) * _w((3, 4), 25)).sum(), [a])),
        ("pow", lambda: T.grad_check(lambda p: ((p ** 2.5) * _w((3, 4), 26)).sum(), [pos])),
        ("exp", lambda: T.grad_check(lambda a: (a.exp() * _w((3, 4), 27)).sum(), [a])),
        ("log", lambda: T.grad_check(lambda p: (p.log() * _w((3, 4), 28)).sum(), [pos])),
        ("sqrt", lambda: T.grad_check(lambda p: (p.sqrt() * _w((3, 4), 29)).sum(), [pos])),
        ("sigmoid", lambda: T.grad_check(lambda a: (a.sigmoid() * _w((3, 4), 30)).sum(), [a])),
        ("relu", lambda: T.grad_check(lambda z: (z.relu() * _w((3, 4), 31)).sum(), [off_zero])),
        ("clip", lambda: T.grad_check(lambda z: (z.clip(-0.9, 0.9) * _w((3, 4), 32)).sum(),
                                      [inner])),
        ("sum", lambda: T.grad_check(lambda a: a.sum(), [a])),
        ("sum-axis", lambda: T.grad_check(lambda a: (a.sum(axis=0) * _w((4,), 33)).sum(), [a])),
        ("mean", lambda: T.grad_check(lambda a: (a.mean(axis=1) * _w((3,), 34)).sum() + a.mean(),
                                      [a])),
        ("reshape", lambda: T.grad_check(lambda a: (a.reshape(4, 3) * _w((4, 3), 35)).sum(),
                                         [a])),
        ("flatten", lambda: T.grad_check(lambda a: (a.flatten() * _w((12,), 36)).sum(), [a])),
        ("transpose", lambda: T.grad_check(lambda a: (a.transpose() * _w((4, 3), 37)).sum(),
                                           [a])),
        ("getitem-slice", lambda: T.grad_check(lambda a: (a[1:, ::2] * _w((2, 2), 38)).sum(),
                                               [a])),
        ("getitem-fancy", lambda: T.grad_check(
            lambda a: (a[np.array([0, 2, 0])] * _w((3, 4), 39)).sum(), [a])),
        ("concat", lambda: T.grad_check(
            lambda a, b: (T.concat([a, b], axis=1) * _w((3, 8), 40)).sum(), [a, b])),
        ("matmul", lambda: T.grad_check(lambda u, v: (u.matmul(v) * _w((3, 2), 41)).sum(),
                                        [m1, m2])),
        ("bmm", lambda: T.grad_check(lambda u, v: (u.bmm(v) * _w((2, 3, 2), 42)).sum(),
                                     [bm1, bm2])),
        ("softmax", lambda: T.grad_check(lambda a: (T.softmax(a) * _w((3, 4), 43)).sum(), [a])),
        ("conv2d", lambda: T.grad_check(
            lambda x, k: (T.conv2d(x, k) * _w((3, 4, 4), 44)).sum(), [x, k])),
        ("conv2d-s2p1-bias", lambda: T.grad_check(
            lambda x, k, kb: (T.conv2d(x, k, kb, stride=2, padding=1)
                              * _w((3, 3, 3), 45)).sum(), [x, k, kb])),
        ("upsample", lambda: T.grad_check(
            lambda x: (T.upsample_bilinear(x, 2) * _w((2, 12, 12), 46)).sum(), [x])),
        ("bilinear-sample", lambda: T.grad_check(
            lambda x: (T.bilinear_sample(x, g_i, g_j) * _w((2, 2, 3, 3), 47)).sum(), [x])),
        ("gather-windows", lambda: T.grad_check(
            lambda x: (T.gather_windows(x, origins, 3) * _w((3, 9, 2), 48)).sum(), [x])),
        ("scatter-windows", lambda: T.grad_check(
            lambda y: (T.scatter_windows(y, origins, 3, 6, 6) * _w((2, 6, 6), 49)).sum(),
            [win])),
    ]


def _module_checks():
    """acm_forward, afsm_forward and the three loss terms."""
    g = np.random.default_rng(50)
    acm = AcmLevelParams(3, g)
    for corr in (acm.rgb_dir, acm.t_dir):
        corr.wv.data[:] = g.normal(size=(3, 3)) * 0.5
    f_rgb = T.Tensor(g.normal(size=(3, 4, 4)), requires_grad=True)
    f_t = T.Tensor(g.normal(size=(3, 4, 4)), requires_grad=True)
    grid = build_window_grid(4, 4, 2, 4)
    acm_leaves = [f_rgb, f_t]
    for corr in (acm.rgb_dir, acm.t_dir):
        acm_leaves += [corr.wq, corr.bq, corr.wk, corr.bk, corr.wv, corr.bv]
    wr, wt = g.normal(size=(3, 4, 4)), g.normal(size=(3, 4, 4))

    stage = AfsmStageParams(2, 3, 2, g)
    for layer in stage.layers:
        layer.off_b.data[:] = g.uniform(0.1, 0.4, size=18) * np.where(
            g.uniform(size=18) < 0.5, -1, 1)
    a_t = T.Tensor(g.normal(size=(2, 4, 4)), requires_grad=True)
    a_rgb = T.Tensor(g.normal(size=(2, 4, 4)), requires_grad=True)
    afsm_leaves = [a_t, a_rgb, stage.fuse_w, stage.fuse_b]
    for layer in stage.layers:
        afsm_leaves += [layer.off_w, layer.off_b, layer.w, layer.b]
    wa = g.normal(size=(3, 4, 4))

    pred = T.Tensor(g.uniform(0.05, 0.95, size=(5, 6)), requires_grad=True)
    gt = (g.random((5, 6)) < 0.4).astype(float)

    return [
        ("acm_forward", lambda: T.grad_check(
            lambda *ls: (lambda pair: (pair[0] * wr).sum() + (pair[1] * wt).sum())(
                acm_forward(f_rgb, f_t, acm, grid)), acm_leaves)),
        ("afsm_forward", lambda: T.grad_check(
            lambda *ls: (afsm_forward(a_t, a_rgb, stage) * wa).sum(), afsm_leaves)),
        ("bce_loss", lambda: T.grad_check(lambda p: bce_loss(p, gt), [pred])),
        ("smoothness_loss", lambda: T.grad_check(lambda p: smoothness_loss(p, gt), [pred])),
        ("dice_loss", lambda: T.grad_check(lambda p: dice_loss(p, gt), [pred])),
    ]


def test_c1_gradient_suite():
    t0 = time.perf_counter()
    worst_name, worst_err = "", 0.0
    for name, run in _op_checks() + _module_checks():
        rep = run()
        assert rep.passed, f"{name}: {rep}"
        if rep.max_rel_err > worst_err:
            worst_name, worst_err = name, rep.max_rel_err

    model = SACNet(SACNetConfig.micro(64, seed=0))
    nudge_offsets(model, np.random.default_rng(1))
    pair = gen_pairs(1, 64, 0)[0]
    e2e = end_to_end_grad_check(model, pair.rgb, pair.thermal, pair.gt,
                                entries=240, tol=1e-3, seed=0)
    elapsed = time.perf_counter() - t0
    _verdict(
        "C1 gradient-suite",
        worst_err <= 1e-4 and e2e.passed and e2e.checked >= 200 and elapsed < 120,
        f"worst op/module rel err {worst_err:.2e} at {worst_name} (tol 1e-4); "
        f"end-to-end rel err {e2e.max_rel_err:.2e} over {e2e.checked} entries "
        f"(tol 1e-3); {elapsed:.1f}s")


# -------------------------------------------------- C2 oracle equivalence

def _conv_oracle_dev(g):
    k = int(g.choice([1, 3, 5]))
    stride, padding = int(g.choice([1, 2])), int(g.choice([0, 1, 2]))
    cin, cout = int(g.integers(1, 4)), int(g.integers(1, 4))
    x = g.normal(size=(cin, int(g.integers(k, k + 5)), int(g.integers(k, k + 5))))
    w = g.normal(size=(cout, cin, k, k))
    b = g.normal(size=(cout,))
    got = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b), stride, padding).data
    return np.max(np.abs(got - test_tensor._conv2d_naive(x, w, b, stride, padding)))


def _corr_oracle_dev(g):
    d = int(g.integers(2, 8))
    p = test_acm._rand_corr(d, int(g.integers(0, 10 ** 6)))
    q = g.normal(size=(int(g.integers(1, 7)), d))
    v = g.normal(size=(int(g.integers(1, 7)), d))
    got = correlation(T.Tensor(q), T.Tensor(v), p).data
    return np.max(np.abs(got - test_acm._correlation_naive(q, v, p)))


def _deform_oracle_dev(g):
    c, o = int(g.integers(1, 4)), int(g.integers(1, 4))
    h, wd = int(g.integers(3, 8)), int(g.integers(3, 8))
    x = g.normal(size=(c, h, wd))
    w = g.normal(size=(o, c, 3, 3))
    b = g.normal(size=(o,))
    zero = np.zeros((18, h, wd))
    got = deformable_conv(T.Tensor(x), T.Tensor(zero), T.Tensor(w), T.Tensor(b)).data
    return np.max(np.abs(got - test_tensor._conv2d_naive(x, w, b, 1, 1)))


def _metric_instance(g):
    h, wd = int(g.integers(6, 18)), int(g.integers(6, 18))
    pred = g.random((h, wd))
    if g.random() < 0.4:
        pred = np.round(pred * 255) / 255          # exercise threshold ties
    gt = (g.random((h, wd)) < g.uniform(0.15, 0.6)).astype(np.float64)
    if gt.min() == gt.max():                       # degenerate: flip one pixel
        gt.flat[0] = 1 - gt.flat[0]
    return pred, gt


def test_c2_oracle_equivalence():
    g = np.random.default_rng(100)
    conv = max(_conv_oracle_dev(g) for _ in range(20))
    corr = max(_corr_oracle_dev(g) for _ in range(20))
    deform = max(_deform_oracle_dev(g) for _ in range(20))

    metric_dev = 0.0
    for _ in range(20):
        pred, gt = _metric_instance(g)
        devs = (abs(mae(pred, gt) - test_metrics._mae_naive(pred, gt)),
                abs(s_measure(pred, gt) - test_metrics._s_naive(pred, gt)),
                np.max(np.abs(e_measure_curve(pred, gt)
                              - test_metrics._e_curve_naive(pred, gt))),
                abs(weighted_f(pred, gt) - test_metrics._wf_naive(pred, gt)))
        metric_dev = max(metric_dev, *devs)

    _verdict(
        "C2 oracle-equivalence",
        conv < 1e-12 and corr < 1e-10 and deform < 1e-10 and metric_dev < 1e-6,
        f"20 instances each: conv2d {conv:.1e} (tol 1e-12), "
        f"correlation {corr:.1e} (tol 1e-10), deformable zero-offset "
        f"{deform:.1e} (tol 1e-10), metrics {metric_dev:.1e} (tol 1e-6)")


# ------------------------------------------------------ C3 window geometry

def test_c3_window_geometry():
    grid = build_window_grid(8, 8, 2, 4)
    rows = sorted(set(grid.small_origins[:, 0].tolist()))
    cols = sorted(set(grid.small_origins[:, 1].tolist()))
    worked = (grid.count == 16 and rows == [0, 2, 4, 6] and cols == [0, 2, 4, 6]
              and np.array_equal(grid.large_origins, grid.small_origins - 1))

    g = np.random.default_rng(101)
    configs = [(12, 16, 4, 6), (8, 8, 2, 4)]
    while len(configs) < 10:
        m = int(g.integers(1, 5))
        configs.append((int(g.integers(m, 20)), int(g.integers(m, 20)),
                        m, m + int(g.integers(0, 4))))
    exact = 0
    for h, wd, m, n in configs:
        grid_i = build_window_grid(h, wd, m, n)
        x = T.Tensor(np.arange(2 * h * wd, dtype=np.float64).reshape(2, h, wd))
        back = T.scatter_windows(T.gather_windows(x, grid_i.small_origins, m),
                                 grid_i.small_origins, m, h, wd)
        exact += int(np.array_equal(back.data, x.data))

    _verdict(
        "C3 window-geometry",
        worked and exact == 10,
        f"8x8 M=2: {grid.count} small windows on a {len(rows)}x{len(cols)} grid, "
        f"large windows centered; scatter-back exact on {exact}/10 configs "
        f"(including M=4, N=6)")


# ---------------------------------------------- C4/C5 shared training run

PROTOCOL = dict(pairs=4, size=64, seed=3, steps=300, lr=1e-3)


def _protocol_model(variant="full"):
    cfg = ablation_config(SACNetConfig.micro(PROTOCOL["size"], seed=PROTOCOL["seed"]),
                          variant)
    return SACNet(cfg)


@pytest.fixture(scope="module")
def toy_run():
    pairs = gen_pairs(PROTOCOL["pairs"], PROTOCOL["size"], PROTOCOL["seed"])
    model = _protocol_model()
    t0 = time.perf_counter()
    result = train_toy(model, pairs, PROTOCOL["steps"], lr=PROTOCOL["lr"])
    elapsed = time.perf_counter() - t0
    ious = [iou(model.forward(T.Tensor(p.rgb), T.Tensor(p.thermal)).data[0], p.gt)
            for p in pairs]
    return SimpleNamespace(pairs=pairs, result=result, elapsed=elapsed,
                           mean_iou=float(np.mean(ious)))


def test_c4_overfit_convergence(toy_run):
    r = toy_run.result
    ratio = r.final_loss / r.initial_loss
    _verdict(
        "C4 overfit-convergence",
        ratio < 0.5 and toy_run.mean_iou > 0.8 and toy_run.elapsed < 600,
        f"loss {r.initial_loss:.4f} -> {r.final_loss:.4f} (ratio {ratio:.3f}, "
        f"need < 0.5); mean IoU {toy_run.mean_iou:.3f} (need > 0.8); "
        f"{toy_run.elapsed:.0f}s (budget 600s)")


def test_c5_ablation_direction(toy_run):
    full = toy_run.result.final_loss
    margins = {}
    for variant in ("no-acm", "no-awp", "no-sgm", "no-afsm"):
        model = _protocol_model(variant)
        res = train_toy(model, toy_run.pairs, PROTOCOL["steps"], lr=PROTOCOL["lr"])
        margins[variant] = res.final_loss - full
    # every violation is named in the verdict line, never swallowed
    detail = ", ".join(
        f"{v} {m:+.4f}{'' if m >= 0 else ' VIOLATION'}" for v, m in margins.items())
    _verdict(
        "C5 ablation-direction",
        all(m >= 0 for m in margins.values()),
        f"ablation minus full final loss (full {full:.4f}): {detail}")


# -------------------------------------------------------- C6 metric sanity

def test_c6_metric_sanity():
    g = np.random.default_rng(102)
    dev = 0.0
    for _ in range(5):
        gt = (g.random((int(g.integers(8, 20)), int(g.integers(8, 20))))
              < g.uniform(0.2, 0.6)).astype(np.uint8)
        if gt.min() == gt.max():
            gt.flat[0] = 1 - gt.flat[0]
        pred = gt.astype(np.float64)
        _, e_max = (lambda c: (c.mean(), c.max()))(e_measure_curve(pred, gt))
        dev = max(dev, abs(mae(pred, gt)), abs(s_measure(pred, gt) - 1.0),
                  abs(e_max - 1.0), abs(weighted_f(pred, gt) - 1.0))

    pairs = []
    for _ in range(6):
        pred, gt = _metric_instance(g)
        pairs.append((pred, gt))
    curve = pr_curve(pairs)
    monotone = (len(curve.recall) == 256 and len(curve.precision) == 256
                and bool(np.all(np.diff(curve.recall) <= 0)))

    _verdict(
        "C6 metric-sanity",
        dev <= 1e-6 and monotone,
        f"perfect-prediction worst deviation {dev:.1e} (tol 1e-6); recall "
        f"non-increasing across {len(curve.recall)} thresholds: {monotone}")


# --------------------------------------------------------- C7 determinism

def _tree_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = Path(base) / f
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def _same_trees(a, b):
    ta, tb = _tree_bytes(a), _tree_bytes(b)
    return ta == tb and len(ta) > 0, len(ta)


def test_c7_determinism(tmp_path):
    runs = {}
    for tag in ("a", "b"):
        gen = tmp_path / f"gen_{tag}"
        r = run_cli("gen-pairs", "--out-dir", str(gen), "--count", "2",
                    "--size", "64", "--seed", "11")
        assert r.returncode == 0, r.stderr
        pred = tmp_path / f"pred_{tag}.pgm"
        r = run_cli("forward", "--rgb", str(gen / "pair_000.rgb.ppm"),
                    "--thermal", str(gen / "pair_000.thermal.ppm"),
                    "--out", str(pred), "--seed", "4")
        assert r.returncode == 0, r.stderr
        train = tmp_path / f"train_{tag}"
        r = run_cli("train-toy", "--out-dir", str(train), "--pairs", "2",
                    "--size", "64", "--steps", "8", "--seed", "6")
        assert r.returncode == 0, r.stderr
        runs[tag] = (gen, pred, train)

    gen_ok, n_gen = _same_trees(runs["a"][0], runs["b"][0])
    fwd_ok = runs["a"][1].read_bytes() == runs["b"][1].read_bytes()
    train_ok, n_train = _same_trees(runs["a"][2], runs["b"][2])
    _verdict(
        "C7 determinism",
        gen_ok and fwd_ok and train_ok,
        f"same-seed reruns byte-identical: gen-pairs {n_gen} files ({gen_ok}), "
        f"forward saliency map ({fwd_ok}), train-toy {n_train} artifacts "
        f"({train_ok})")
