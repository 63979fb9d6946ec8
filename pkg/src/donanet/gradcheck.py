"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float = 1e-4, coords=None):
    """Central differences w.r.t. ``inputs[index]``; only ``coords`` (flat indices) if given."""
    x = inputs[index].data
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(*inputs).data)
        flat[i] = orig - eps
        fm = float(f(*inputs).data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
               samples: int | None = None, rng=None) -> float:
    """Max over all input elements of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` must return a scalar tensor; inputs should be float64 tensors with
    ``requires_grad`` set on the ones to check. With ``samples`` only that many
    randomly chosen elements per input are compared (for large parameter sets).
    """
    for t in inputs:
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        coords = None
        if samples is not None and samples < t.data.size:
            coords = rng.choice(t.data.size, size=samples, replace=False)
        numeric = numeric_grad(f, inputs, i, eps, coords)
        if coords is not None:
            analytic, numeric = analytic.reshape(-1)[coords], numeric.reshape(-1)[coords]
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
