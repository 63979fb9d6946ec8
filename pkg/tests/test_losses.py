import math

import numpy as np
import pytest

from conftest import var
from donanet.gradcheck import grad_check
from donanet.losses import (PROB_CLAMP, LossConfig, PixelLabels, ctcr_kl, pair_weights, pos_weight, total_loss,
                            weighted_bce)
from donanet.tensor import Tensor


def labels_for(y):
    return PixelLabels.from_mask(y)


def direct_bce(p, y, w):
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    per_pair = [np.mean(-(wj * yj * np.log(pj) + (1 - yj) * np.log(1 - pj))) for pj, yj, wj in zip(pc, y, w)]
    return float(np.mean(per_pair))


def test_pos_weight_at_zero_ratio():
    # constants 2, 0.002 and 1.5 from the method description
    assert pos_weight(0, 100) == pytest.approx(math.e ** 2 + 1.5, abs=1e-12)
    assert pos_weight(0, 100) == pytest.approx(8.889, abs=1e-3)


def test_pos_weight_limit_and_monotone():
    rho = np.linspace(0.0, 1e4, 5001)
    w = np.array([pos_weight(r * 1000, 1000) for r in rho])
    assert np.all(np.diff(w) < 0)
    assert np.all(w > 1.5)
    assert w[-1] == pytest.approx(1.5, abs=1e-6)


def test_pos_weight_rejects_all_positive():
    with pytest.raises(ValueError):
        pos_weight(10, 0)


def test_pixel_labels_counts(rng):
    m = (rng.random((3, 8, 8)) > 0.7).astype(np.uint8)
    lab = labels_for(m)
    assert np.array_equal(lab.n_pos + lab.n_neg, np.full(3, 64))
    assert lab.y.shape == (3, 1, 8, 8)


def test_bce_perfect_prediction_near_zero(rng):
    y = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
    p = np.clip(y, PROB_CLAMP, 1 - PROB_CLAMP)
    assert float(weighted_bce(Tensor(p), labels_for(y[:, 0]), 5.0).data) < 1e-5


def test_bce_w1_matches_direct(rng):
    p = rng.uniform(0.01, 0.99, (3, 1, 16, 16))
    y = (rng.random((3, 16, 16)) > 0.6).astype(float)
    got = float(weighted_bce(Tensor(p), labels_for(y), 1.0).data)
    assert abs(got - direct_bce(p[:, 0], y, [1.0] * 3)) < 1e-12


def test_bce_per_pair_weights_match_direct(rng):
    p = rng.uniform(0.01, 0.99, (3, 1, 8, 8))
    y = (rng.random((3, 8, 8)) > 0.6).astype(float)
    w = [1.0, 2.5, 7.0]
    got = float(weighted_bce(Tensor(p), labels_for(y), np.array(w)).data)
    assert abs(got - direct_bce(p[:, 0], y, w)) < 1e-12


def test_bce_linear_in_w(rng):
    p = rng.uniform(0.01, 0.99, (2, 1, 8, 8))
    y = (rng.random((2, 8, 8)) > 0.5).astype(float)
    lab = labels_for(y)
    l1 = float(weighted_bce(Tensor(p), lab, 1.0).data)
    l2 = float(weighted_bce(Tensor(p), lab, 2.0).data)
    l3 = float(weighted_bce(Tensor(p), lab, 3.0).data)
    pos = -np.mean(y[:, None] * np.log(p))
    assert abs((l2 - l1) - pos) < 1e-12 and abs((l3 - l2) - pos) < 1e-12


def test_bce_rejects_out_of_range():
    lab = labels_for(np.zeros((1, 2, 2)))
    for bad in (1.5, -0.1, np.nan):
        with pytest.raises(ValueError):
            weighted_bce(Tensor(np.full((1, 1, 2, 2), bad)), lab, 1.0)


def test_bce_permutation_invariant(rng):
    p = rng.uniform(0.01, 0.99, (1, 1, 6, 6))
    y = (rng.random((1, 6, 6)) > 0.5).astype(float)
    perm = rng.permutation(36)
    pp = p.reshape(-1)[perm].reshape(p.shape)
    yp = y.reshape(-1)[perm].reshape(y.shape)
    a = float(weighted_bce(Tensor(p), labels_for(y), 3.0).data)
    b = float(weighted_bce(Tensor(pp), labels_for(yp), 3.0).data)
    assert a == pytest.approx(b, abs=1e-14)


def test_bce_gradcheck(rng):
    p = var(rng.uniform(0.05, 0.95, (2, 1, 4, 4)))
    lab = labels_for((rng.random((2, 4, 4)) > 0.5).astype(float))
    assert grad_check(lambda t: weighted_bce(t, lab, np.array([2.0, 3.0])), [p], eps=1e-6) < 1e-4


def test_kl_zero_on_equal_and_scalar_value(rng):
    p = rng.uniform(0.01, 0.99, (2, 1, 5, 5))
    assert float(ctcr_kl(Tensor(p), Tensor(p)).data) == 0.0
    v = float(ctcr_kl(Tensor([0.9]), Tensor([0.5])).data)
    assert v == pytest.approx(0.9 * math.log(1.8) + 0.1 * math.log(0.2), abs=1e-12)
    assert v == pytest.approx(0.368, abs=1e-3)


def test_kl_nonnegative_random_pairs(rng):
    p = rng.random((10000, 1, 2, 2))
    q = rng.random((10000, 1, 2, 2))
    for i in range(0, 10000, 1000):
        assert float(ctcr_kl(Tensor(p[i:i + 1000]), Tensor(q[i:i + 1000])).data) >= 0.0
    # per-pair, not just on average
    pc, qc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP), np.clip(q, PROB_CLAMP, 1 - PROB_CLAMP)
    per = pc * np.log(pc / qc) + (1 - pc) * np.log((1 - pc) / (1 - qc))
    assert per.min() >= -1e-15


def test_kl_shape_mismatch():
    with pytest.raises(ValueError):
        ctcr_kl(Tensor(np.full((1, 1, 2, 2), 0.5)), Tensor(np.full((1, 1, 2, 3), 0.5)))


def test_kl_gradients_reach_both(rng):
    p = var(rng.uniform(0.05, 0.95, (1, 1, 3, 3)))
    q = var(rng.uniform(0.05, 0.95, (1, 1, 3, 3)))
    assert grad_check(lambda a, b: ctcr_kl(a, b), [p, q], eps=1e-6) < 1e-4
    assert np.abs(p.grad).max() > 0 and np.abs(q.grad).max() > 0


def test_total_loss_compositions(rng):
    p = rng.uniform(0.05, 0.95, (2, 1, 8, 8))
    y = (rng.random((2, 8, 8)) > 0.7).astype(float)
    lab = labels_for(y)
    cfg0 = LossConfig(ctcr_weight=0.0)
    tot, parts = total_loss(Tensor(p), Tensor(p), lab, cfg0)
    assert float(tot.data) == pytest.approx(2 * float(parts["wce_ori"].data), abs=1e-12)
    q = rng.uniform(0.05, 0.95, (2, 1, 8, 8))
    cfg = LossConfig(ctcr_weight=0.7)
    tot, parts = total_loss(Tensor(p), Tensor(q), lab, cfg)
    w = pair_weights(lab, cfg)
    recon = (float(weighted_bce(Tensor(p), lab, w).data) + float(weighted_bce(Tensor(q), lab, w).data)
             + 0.7 * float(ctcr_kl(Tensor(q), Tensor(p)).data))
    assert abs(float(tot.data) - recon) < 1e-12
    ori_only, parts = total_loss(Tensor(p), None, lab, cfg)
    assert set(parts) == {"wce_ori"}


def test_total_loss_perfect_near_zero(rng):
    y = (rng.random((2, 8, 8)) > 0.7).astype(float)
    p = Tensor(np.clip(y[:, None], PROB_CLAMP, 1 - PROB_CLAMP))
    assert float(total_loss(p, p, labels_for(y))[0].data) < 1e-5


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda_w=0.0)
    with pytest.raises(ValueError):
        LossConfig(ctcr_weight=-1.0)
