"""Dynamically weighted BCE and the cross-temporal consistency KL loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, clip, log, scalar_add, scalar_mul

PROB_CLAMP = 1e-7


@dataclass
class LossConfig:
    alpha: float = 2.0
    beta: float = 0.002
    lambda_w: float = 1.5
    ctcr_weight: float = 1.0

    def __post_init__(self):
        if self.lambda_w <= 0:
            raise ValueError("lambda_w must be positive")
        if self.ctcr_weight < 0:
            raise ValueError("ctcr_weight must be non-negative")


@dataclass
class PixelLabels:
    """Binary change labels ``N x 1 x H x W`` with per-pair class counts."""

    y: np.ndarray
    n_pos: np.ndarray
    n_neg: np.ndarray

    @classmethod
    def from_mask(cls, mask) -> "PixelLabels":
        y = np.asarray(mask)
        if y.ndim == 2:
            y = y[None, None]
        elif y.ndim == 3:
            y = y[:, None]
        y = (y > 0.5).astype(np.float64)
        n_pos = y.reshape(y.shape[0], -1).sum(axis=1).astype(np.int64)
        n_neg = y[0].size - n_pos
        return cls(y, n_pos, n_neg)


def pos_weight(n_pos, n_neg, cfg: LossConfig | None = None) -> float:
    """Positive-class weight ``exp(alpha - beta * n_pos / n_neg) + lambda_w``.

    Decreases with the positive/negative ratio towards ``lambda_w``.
    """
    cfg = cfg or LossConfig()
    if n_neg <= 0:
        raise ValueError("pos_weight needs at least one negative pixel")
    rho = n_pos / n_neg
    return math.exp(cfg.alpha - cfg.beta * rho) + cfg.lambda_w


def _check_prob(p: Tensor, name: str) -> None:
    d = p.data
    if not np.all(np.isfinite(d)) or d.min() < 0.0 or d.max() > 1.0:
        raise ValueError(f"{name} must hold probabilities in [0, 1]")


def _safe_log(p: Tensor) -> Tensor:
    return log(clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def weighted_bce(p, labels: PixelLabels, w) -> Tensor:
    """Pair-averaged, pixel-averaged weighted binary cross-entropy.

    ``w`` is a scalar or one weight per pair; it scales only the positive term.
    """
    p = as_tensor(p)
    _check_prob(p, "prediction")
    n = p.shape[0]
    y = labels.y.astype(p.dtype).reshape(p.shape)
    wv = np.broadcast_to(np.asarray(w, dtype=p.dtype), (n,)).reshape((n,) + (1,) * (p.ndim - 1))
    pos = Tensor(wv * y) * _safe_log(p)
    neg = Tensor(1.0 - y) * _safe_log(scalar_add(scalar_mul(p, -1.0), 1.0))
    per_pixel = pos + neg
    return scalar_mul(per_pixel.mean(), -1.0)


def ctcr_kl(p_sty, p_ori) -> Tensor:
    """Pixel-mean Bernoulli KL(p_sty || p_ori); gradients reach both maps."""
    p, q = as_tensor(p_sty), as_tensor(p_ori)
    if p.shape != q.shape:
        raise ValueError(f"ctcr_kl: shape mismatch {p.shape} vs {q.shape}")
    _check_prob(p, "stylized prediction")
    _check_prob(q, "original prediction")
    pc = clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    qc = clip(q, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one_p = scalar_add(scalar_mul(pc, -1.0), 1.0)
    one_q = scalar_add(scalar_mul(qc, -1.0), 1.0)
    kl = pc * (log(pc) - log(qc)) + one_p * (log(one_p) - log(one_q))
    return kl.mean()


def pair_weights(labels: PixelLabels, cfg: LossConfig) -> np.ndarray:
    return np.array([pos_weight(int(a), int(b), cfg) for a, b in zip(labels.n_pos, labels.n_neg)])


def total_loss(out_ori, out_sty, labels: PixelLabels, cfg: LossConfig | None = None):
    """WCE on the original pass, plus WCE and weighted KL on the stylized pass when given.

    ``out_*`` are probability maps (or objects with ``p_out``). Returns
    ``(total, parts)`` with the individual terms.
    """
    cfg = cfg or LossConfig()
    p_ori = getattr(out_ori, "p_out", out_ori)
    w = pair_weights(labels, cfg)
    wce_ori = weighted_bce(p_ori, labels, w)
    parts = {"wce_ori": wce_ori}
    total = wce_ori
    if out_sty is not None:
        p_sty = getattr(out_sty, "p_out", out_sty)
        wce_sty = weighted_bce(p_sty, labels, w)
        kl = ctcr_kl(p_sty, p_ori)
        parts["wce_sty"] = wce_sty
        parts["ctcr"] = kl
        total = total + wce_sty + scalar_mul(kl, cfg.ctcr_weight)
    return total, parts
