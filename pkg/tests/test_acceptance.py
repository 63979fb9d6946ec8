"""Acceptance criteria 1-9, each at its stated tolerance and runtime budget.

A one-line PASS/FAIL summary per criterion is printed at the end of the run
(see ``conftest.py``). The ablation (criterion 8) reuses
``results/ablation.json`` when it was produced with the default harness
configuration; set ``DONANET_RERUN_ABLATION=1`` to recompute it.
"""

import dataclasses
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import away_from_zero, var
from donanet.ctst import IMAGE_EPS, StyleMode, apply_mode, normalize_local_image, restyle
from donanet.data import GenConfig, generate_dataset
from donanet.ddr import (NormConfig, RunningMoments, bn_forward, bw_forward, effective_grid, gln, glw, liw_forward,
                         lin_forward)
from donanet.functional import bilinear_resize, concat_channels, conv2d, maxpool2
from donanet.gradcheck import grad_check
from donanet.linalg import inv_sqrt_eig, inv_sqrt_newton, inv_sqrt_newton_t
from donanet.losses import LossConfig, PixelLabels, ctcr_kl, pos_weight, total_loss, weighted_bce
from donanet.metrics import confusion, metrics
from donanet.network import NetConfig, SDNetwork, load_checkpoint, save_checkpoint
from donanet.stats import make_grid, region_mean
from donanet.tensor import (Tensor, add, clip, concat, exp, getitem, log, matmul, mul, power, relu, reshape,
                            scalar_add, scalar_mul, sigmoid, stack, sub, swap_last, tabs, tmean, trace, transpose,
                            tsum)
from donanet.train import AblationConfig, TrainConfig, ablation_verdict, evaluate, fit, run_ablation

RESULTS = Path(__file__).resolve().parent.parent / "results" / "ablation.json"


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


def region_gram_errors(y, grid):
    out = []
    c = y.shape[1]
    for sample in y:
        for r0, c0, nr, nc in grid.boxes:
            phi = sample[:, r0:r0 + nr, c0:c0 + nc].reshape(c, -1)
            out.append(np.linalg.norm(phi @ phi.T / phi.shape[1] - np.eye(c)) / np.sqrt(c))
    return np.array(out)


# -- 1 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def whitening_input():
    rng = np.random.default_rng(101)
    x = rng.normal(size=(2, 8, 32, 32))
    x[:, 3] += 0.7 * x[:, 1]
    return x, make_grid(32, 32, 2)  # 16x16 regions


@pytest.mark.criterion(1)
def test_c1_whitening_newton_t7(whitening_input):
    x, grid = whitening_input
    with Budget(5):
        y = liw_forward(Tensor(x), NormConfig(lam=2, eps=1e-5, newton_t=7), grid).data
        err = region_gram_errors(y, grid).max()
    assert err < 2e-2, err


@pytest.mark.criterion(1)
def test_c1_whitening_eig_route(whitening_input):
    x, grid = whitening_input
    with Budget(5):
        y = liw_forward(Tensor(x), NormConfig(lam=2, eps=1e-5), grid, method="eig").data
        err = region_gram_errors(y, grid).max()
    assert err < 1e-6, err


# -- 2 ---------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c2_newton_vs_eig_oracle():
    rng = np.random.default_rng(202)
    worst = 0.0
    with Budget(10):
        for _ in range(100):
            q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
            w = np.exp(rng.uniform(0.0, np.log(100.0), 16))
            w[0], w[1] = 1.0, 100.0  # condition number exactly 100
            a = (q * w) @ q.T
            a = 0.5 * (a + a.T)
            ref = inv_sqrt_eig(a)
            worst = max(worst, np.linalg.norm(inv_sqrt_newton(a, 5) - ref) / np.linalg.norm(ref))
    assert worst < 1e-3, worst


# -- 3 ---------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_c3_lin_moments():
    rng = np.random.default_rng(303)
    f = rng.normal(2.0, 3.0, size=(2, 64, 48, 48))
    with Budget(5):
        y = lin_forward(Tensor(f), NormConfig(lam=6)).data
    grid = effective_grid(48, 48, 6)
    for sample in y:
        mu = region_mean(sample, grid)
        v = region_mean((sample - np.repeat(np.repeat(mu, grid.row_sizes, 1), grid.col_sizes, 2)) ** 2, grid)
        assert np.abs(mu).max() < 1e-6
        assert v.min() >= 0.99 and v.max() <= 1.0


# -- 4 ---------------------------------------------------------------------------

def _ops(rng):
    """(name, f, inputs) for every differentiable operation."""
    def proj(shape):
        return Tensor(rng.normal(size=shape))

    ops = []

    def add_op(name, fn, *inputs):
        with_proj = {}

        def f(*xs):
            out = fn(*xs)
            if "g" not in with_proj:
                with_proj["g"] = proj(out.shape)
            return (out * with_proj["g"]).sum()
        ops.append((name, f, list(inputs)))

    a, b = var(rng.normal(size=(3, 4))), var(rng.normal(size=(4,)))
    add_op("add", add, a, b)
    add_op("sub", sub, var(rng.normal(size=(3, 4))), var(rng.normal(size=(3, 1))))
    add_op("mul", mul, var(rng.normal(size=(3, 4))), var(rng.normal(size=(1, 4))))
    add_op("scalar_mul", lambda x: scalar_mul(x, -2.5), var(rng.normal(size=(5,))))
    add_op("scalar_add", lambda x: scalar_add(x, 0.7), var(rng.normal(size=(5,))))
    add_op("abs", tabs, var(away_from_zero(rng, (4, 3))))
    add_op("relu", relu, var(away_from_zero(rng, (4, 3))))
    add_op("sigmoid", sigmoid, var(rng.normal(size=(4, 3))))
    add_op("log", log, var(rng.uniform(0.5, 2.0, (4, 3))))
    add_op("exp", exp, var(rng.normal(size=(4, 3))))
    add_op("power", lambda x: power(x, -0.5), var(rng.uniform(0.5, 2.0, (4, 3))))
    add_op("power_frac", lambda x: power(x, 1.5), var(rng.uniform(0.5, 2.0, (4, 3))))
    xc = rng.uniform(-1, 1, (4, 3))
    xc[np.abs(np.abs(xc) - 0.5) < 0.05] = 0.2
    add_op("clip", lambda x: clip(x, -0.5, 0.5), var(xc))
    add_op("sum_axis", lambda x: tsum(x, axis=1, keepdims=True), var(rng.normal(size=(3, 4, 2))))
    add_op("mean_axis", lambda x: tmean(x, axis=(0, 2)), var(rng.normal(size=(3, 4, 2))))
    add_op("reshape", lambda x: reshape(x, (4, 6)), var(rng.normal(size=(2, 3, 4))))
    add_op("transpose", lambda x: transpose(x, (2, 0, 1)), var(rng.normal(size=(2, 3, 4))))
    add_op("swap_last", swap_last, var(rng.normal(size=(2, 3, 4))))
    add_op("getitem_slice", lambda x: getitem(x, (slice(None), slice(1, 3))), var(rng.normal(size=(3, 4))))
    add_op("getitem_fancy", lambda x: getitem(x, np.array([0, 2, 2])), var(rng.normal(size=(3, 4))))
    add_op("concat", lambda x, y: concat([x, y], axis=1), var(rng.normal(size=(2, 3))), var(rng.normal(size=(2, 2))))
    add_op("stack", lambda x, y: stack([x, y], axis=0), var(rng.normal(size=(2, 3))), var(rng.normal(size=(2, 3))))
    add_op("matmul", matmul, var(rng.normal(size=(2, 3, 4))), var(rng.normal(size=(2, 4, 5))))
    add_op("trace", trace, var(rng.normal(size=(2, 4, 4))))
    add_op("conv2d", lambda x, w, bb: conv2d(x, w, bb, stride=2, pad=1),
           var(rng.normal(size=(2, 3, 7, 7))), var(rng.normal(size=(4, 3, 3, 3))), var(rng.normal(size=(4,))))
    add_op("maxpool2", maxpool2, var(rng.permutation(64).reshape(1, 1, 8, 8) * 0.1))
    add_op("bilinear_resize", lambda x: bilinear_resize(x, 8, 10), var(rng.normal(size=(1, 2, 4, 5))))
    add_op("concat_channels", lambda x, y: concat_channels([x, y]),
           var(rng.normal(size=(1, 2, 4, 4))), var(rng.normal(size=(1, 3, 4, 4))))
    add_op("inv_sqrt_newton", lambda m: inv_sqrt_newton_t(matmul(m, swap_last(m)) + Tensor(np.eye(4)), 5),
           var(rng.normal(size=(4, 4))))
    cfg = NormConfig(lam=2, newton_t=5)
    add_op("lin", lambda x: lin_forward(x, cfg), var(rng.normal(size=(1, 3, 8, 8))))
    add_op("bn", lambda x: bn_forward(x, RunningMoments(3, dtype=np.float64), True),
           var(rng.normal(size=(2, 3, 4, 4))))
    add_op("liw", lambda x: liw_forward(x, cfg), var(rng.normal(size=(1, 4, 8, 8))))
    add_op("liw_gram_route", lambda x: liw_forward(x, cfg), var(rng.normal(size=(1, 6, 4, 4))))
    add_op("bw", lambda x: bw_forward(x, RunningMoments(3, "full", dtype=np.float64), True, cfg),
           var(rng.normal(size=(2, 3, 4, 4))))
    add_op("gln", lambda x: gln(x, RunningMoments(3, dtype=np.float64), cfg, True),
           var(rng.normal(size=(2, 3, 8, 8))))
    add_op("glw", lambda x: glw(x, RunningMoments(3, "full", dtype=np.float64), cfg, True),
           var(rng.normal(size=(2, 3, 8, 8))))
    labels = PixelLabels.from_mask((rng.random((2, 4, 4)) > 0.6).astype(np.uint8))
    add_op("weighted_bce", lambda p: weighted_bce(p, labels, np.array([3.0, 2.0])),
           var(rng.uniform(0.1, 0.9, (2, 1, 4, 4))))
    add_op("ctcr_kl", ctcr_kl, var(rng.uniform(0.1, 0.9, (2, 1, 4, 4))), var(rng.uniform(0.1, 0.9, (2, 1, 4, 4))))
    return ops


@pytest.mark.criterion(4)
def test_c4_gradient_suite():
    rng = np.random.default_rng(404)
    failures = {}
    with Budget(120):
        for name, f, inputs in _ops(rng):
            err = grad_check(f, inputs)
            if not err < 1e-3:
                failures[name] = err
        # the composed tiny network, glw enabled, training-mode forward
        net = SDNetwork(NetConfig.tiny(variant="glw", dtype="float64", seed=4))
        xa, xb = rng.random((2, 3, 32, 32)), rng.random((2, 3, 32, 32))
        mask = (rng.random((2, 32, 32)) > 0.8).astype(np.uint8)
        labels = PixelLabels.from_mask(mask)
        xa_t, xb_t = var(xa), var(xb)

        def whole(*_):
            out = net.forward_pair(xa_t, xb_t, training=True)
            return total_loss(out, None, labels, LossConfig())[0]

        params = net.parameters()
        for p in params:
            p.requires_grad = True
        err = grad_check(whole, params + [xa_t], samples=6, rng=np.random.default_rng(0))
        if not err < 1e-3:
            failures["tiny_network_glw"] = err
    assert not failures, failures


# -- 5 ---------------------------------------------------------------------------

def _pop_stats(x, grid):
    mu = region_mean(x, grid)
    ex = np.repeat(np.repeat(mu, grid.row_sizes, 1), grid.col_sizes, 2)
    return mu, np.sqrt(region_mean((x - ex) ** 2, grid))


@pytest.mark.criterion(5)
def test_c5_ctst_transplant():
    samples = generate_dataset(51, GenConfig(), 505)
    grid = make_grid(64, 64, 8)
    worst_stat, worst_self = 0.0, 0.0
    with Budget(30):
        for i in range(50):
            pair, donor = samples[i], samples[i + 1]
            xa, xb = pair.xa, pair.xb
            cases = {
                StyleMode.UST_A_TO_B: [(0, xb)],
                StyleMode.UST_B_TO_A: [(1, xa)],
                StyleMode.BST: [(0, xb), (1, xa)],
                StyleMode.IBST: [(0, donor.xa), (1, donor.xb)],
            }
            for mode, checks in cases.items():
                out = apply_mode(mode, (xa, xb), (donor.xa, donor.xb), grid, donor_id=i + 1)
                for which, src in checks:
                    img = out.xa if which == 0 else out.xb
                    m_out, s_out = _pop_stats(img, grid)
                    m_src, s_src = _pop_stats(src, grid)
                    worst_stat = max(worst_stat, np.abs(m_out - m_src).max(), np.abs(s_out - s_src).max())
            for x in (xa, xb):
                xbar, st = normalize_local_image(x, grid, IMAGE_EPS)
                worst_self = max(worst_self, np.abs(restyle(xbar, st, grid) - x).max())
    assert worst_stat < 1e-4, worst_stat
    assert worst_self < 1e-6, worst_self


# -- 6 ---------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_c6_loss_contracts():
    rng = np.random.default_rng(606)
    with Budget(5):
        for _ in range(20):
            p = rng.uniform(1e-3, 1 - 1e-3, (3, 1, 8, 8))
            mask = (rng.random((3, 8, 8)) > 0.5).astype(np.uint8)
            y = mask[:, None].astype(np.float64)
            direct = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
            got = float(weighted_bce(Tensor(p), PixelLabels.from_mask(mask), 1.0).data)
            assert abs(got - direct) < 1e-12
        cfg = LossConfig()
        assert (cfg.alpha, cfg.beta, cfg.lambda_w) == (2.0, 0.002, 1.5)
        assert pos_weight(0, 100) == math.exp(2.0) + 1.5
        ws = [pos_weight(k, 100) for k in range(0, 10 ** 6, 997)]
        assert all(a > b for a, b in zip(ws, ws[1:]))
        assert abs(pos_weight(10 ** 9, 1) - 1.5) < 1e-12
        for _ in range(50):
            p = rng.uniform(0.0, 1.0, (2, 1, 6, 6))
            q = rng.uniform(0.0, 1.0, (2, 1, 6, 6))
            assert float(ctcr_kl(Tensor(p), Tensor(q)).data) > 0.0
            assert float(ctcr_kl(Tensor(p), Tensor(p.copy())).data) == 0.0


# -- 7 ---------------------------------------------------------------------------

def _naive_metrics(pred, mask):
    tp = tn = fp = fn = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if pred[i, j] == 1 and mask[i, j] == 1:
                tp += 1
            elif pred[i, j] == 1:
                fp += 1
            elif mask[i, j] == 1:
                fn += 1
            else:
                tn += 1
    prec = tp / (tp + fp) if tp + fp else (1.0 if tp + fp + fn == 0 else 0.0)
    rec = tp / (tp + fn) if tp + fn else (1.0 if tp + fp + fn == 0 else 0.0)
    if tp + fp + fn == 0:
        f1, iou = 1.0, 1.0
    else:
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        iou = tp / (tp + fp + fn)
    return (tp, tn, fp, fn), (prec, rec, f1, iou, (tp + tn) / (tp + tn + fp + fn))


@pytest.mark.criterion(7)
def test_c7_metrics_oracle():
    rng = np.random.default_rng(707)
    with Budget(10):
        for k in range(1000):
            density = rng.choice([0.0, 0.02, 0.3, 0.7])
            pred = (rng.random((32, 32)) < density).astype(np.uint8)
            mask = (rng.random((32, 32)) < rng.choice([0.0, 0.1, 0.5])).astype(np.uint8)
            counts, ref = _naive_metrics(pred, mask)
            rep = metrics(confusion(pred, mask))
            assert (rep.tp, rep.tn, rep.fp, rep.fn) == counts
            assert (rep.precision, rep.recall, rep.f1, rep.iou, rep.oa) == ref
            assert abs(rep.f1 - 2 * rep.iou / (1 + rep.iou)) < 1e-12


# -- 8 ---------------------------------------------------------------------------

def _ablation_table():
    acfg = AblationConfig()
    expected = json.loads(json.dumps(dataclasses.asdict(acfg)))
    if not os.environ.get("DONANET_RERUN_ABLATION") and RESULTS.exists():
        table = json.loads(RESULTS.read_text(encoding="utf-8"))
        if table.get("config") == expected and len(table.get("runs", [])) == len(acfg.variants) * len(acfg.seeds):
            return table
    RESULTS.parent.mkdir(exist_ok=True)
    table = run_ablation(acfg, results_path=str(RESULTS))
    table["verdict"] = ablation_verdict(table["summary"])
    RESULTS.write_text(json.dumps(table, indent=2), encoding="utf-8")
    return table


@pytest.mark.criterion(8)
def test_c8_ablation_ordering():
    table = _ablation_table()
    verdict = ablation_verdict(table["summary"])
    f1 = {v: round(100 * s["median_f1"], 2) for v, s in table["summary"].items()}
    assert verdict["ordered"], f"median F1 not ordered: {f1}"
    assert verdict["spread_points"] >= 1.0, f"spread {verdict['spread_points']:.2f} F1 points: {f1}"
    assert verdict["pseudo_fp_drop"] >= 0.2, f"pseudo-change FP drop {verdict['pseudo_fp_drop']:.1%}"


# -- 9 ---------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c9_determinism_and_persistence(tmp_path):
    samples = generate_dataset(8, GenConfig(), 909)
    cfg = TrainConfig(epochs=1, batch_size=4, ddr_variant="glw", ctst_enabled=True, seed=9)
    with Budget(120):
        net1, s1 = fit(cfg, samples)
        net2, s2 = fit(cfg, samples)
        assert s1.losses == s2.losses and len(s1.losses) == 2
        for p, q in zip(net1.parameters(), net2.parameters()):
            assert np.array_equal(p.data, q.data)
        save_checkpoint(net1, tmp_path / "n.ckpt")
        back = load_checkpoint(tmp_path / "n.ckpt")
        assert evaluate(back, samples) == evaluate(net1, samples)
