"""Symmetric eigendecomposition and matrix inverse square roots.

``sym_eig`` is a cyclic Jacobi solver used as the exact oracle.
``inv_sqrt_newton`` is the trace-normalised Newton-Schulz iteration used on
the training path; :func:`inv_sqrt_newton_t` is the same recurrence built
from tensor ops so gradients flow through the unrolled iterations.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tensor import Tensor, matmul, power, scalar_mul, trace

SYM_TOL = 1e-9


class EigDecomposition(NamedTuple):
    q: np.ndarray
    eigvals: np.ndarray


def check_symmetric(a: np.ndarray, tol: float = SYM_TOL) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.linalg.norm(a), 1e-300)
    asym = np.linalg.norm(a - a.T)
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (relative asymmetry {asym / scale:.3e})")


def sym_eig(a, max_sweeps: int = 100, tol: float = 1e-12) -> EigDecomposition:
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Stops once the off-diagonal Frobenius norm drops below ``tol * ||A||_F``
    or after ``max_sweeps`` sweeps. Eigenvalues come back in descending
    order with the columns of ``q`` permuted to match.
    """
    a = np.array(a, dtype=np.float64)
    check_symmetric(a)
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    target = tol * np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) + 100.0 * abs(apq) == abs(diff):
                    # theta^2 would overflow; t ~ 1 / (2 theta)
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return EigDecomposition(v[:, order], w[order])


def inv_sqrt_eig(a) -> np.ndarray:
    """``Q diag(w)^(-1/2) Q^T`` for a symmetric positive definite ``a``."""
    q, w = sym_eig(a)
    if w[-1] <= 0:
        raise ValueError(f"matrix is not positive definite (smallest eigenvalue {w[-1]:.3e})")
    return (q * w ** -0.5) @ q.T


def inv_sqrt_newton(a, iters: int = 5) -> np.ndarray:
    """Trace-normalised Newton-Schulz approximation of ``a^(-1/2)``.

    Works on a single matrix or a stack (``... x C x C``).
    """
    a = np.asarray(a)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    s = np.trace(a, axis1=-2, axis2=-1)[..., None, None]
    if np.any(s <= 0):
        raise ValueError("inv_sqrt_newton needs a positive trace")
    an = a / s
    eye = np.eye(a.shape[-1], dtype=a.dtype)
    y = np.broadcast_to(eye, a.shape).copy()
    for _ in range(iters):
        y = 0.5 * y @ (3.0 * eye - y @ y @ an)
    return y / np.sqrt(s)


def newton_residuals(a, iters: int) -> list[float]:
    """``||Y_t A_N Y_t - I||_F`` for t = 0..iters (convergence diagnostic)."""
    a = np.asarray(a, dtype=np.float64)
    an = a / np.trace(a)
    eye = np.eye(a.shape[0])
    y = eye.copy()
    out = [float(np.linalg.norm(y @ an @ y - eye))]
    for _ in range(iters):
        y = 0.5 * y @ (3.0 * eye - y @ y @ an)
        out.append(float(np.linalg.norm(y @ an @ y - eye)))
    return out


def inv_sqrt_newton_t(a: Tensor, iters: int = 5) -> Tensor:
    """Differentiable :func:`inv_sqrt_newton` on a (stack of) ``C x C`` tensors."""
    s = trace(a)
    if np.any(s.data <= 0):
        raise ValueError("inv_sqrt_newton needs a positive trace")
    an = a * power(s, -1.0)
    eye = np.eye(a.shape[-1], dtype=a.dtype)
    three_eye = Tensor(3.0 * eye)
    y = None
    for _ in range(iters):
        if y is None:
            # Y_0 = I, so the first step is 0.5 * (3I - A_N)
            y = scalar_mul(three_eye - an, 0.5)
        else:
            y = scalar_mul(matmul(y, three_eye - matmul(matmul(y, y), an)), 0.5)
    if y is None:
        y = Tensor(np.broadcast_to(eye, a.shape).copy())
    return y * power(s, -0.5)
