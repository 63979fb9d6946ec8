"""Domain difference removal layers.

Local instance normalization (LIN), batch normalization (BN) and their
composition ``gln = LIN(BN(f))``; local instance whitening (LIW), batch
whitening (BW) and ``glw = LIW(BW(f))``. None of these carry learned
affine parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import inv_sqrt_eig, inv_sqrt_newton, inv_sqrt_newton_t
from .stats import RegionGrid, batch_cov, make_grid, region_expand, region_mean
from .tensor import Tensor, as_tensor, matmul, power, reshape, scalar_mul, swap_last, trace, transpose

VARIANTS = ("none", "gln", "glw")


@dataclass
class NormConfig:
    lam: int = 6
    eps: float = 1e-5
    variant: str = "none"
    newton_t: int = 5

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lambda must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.newton_t < 1:
            raise ValueError("newton_t must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


class RunningMoments:
    """Exponential moving averages of batch mean and (co)variance.

    ``second`` holds the variance + eps (``diagonal``) or covariance + eps*I
    (``full``). The first update copies the batch moments outright.
    """

    def __init__(self, channels: int, mode: str = "diagonal", momentum: float = 0.9, dtype=np.float32):
        if mode not in ("diagonal", "full"):
            raise ValueError(f"mode must be 'diagonal' or 'full', got {mode!r}")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.mode = mode
        self.momentum = momentum
        self.count = 0
        self.mean = np.zeros(channels, dtype=dtype)
        if mode == "diagonal":
            self.second = np.ones(channels, dtype=dtype)
        else:
            self.second = np.eye(channels, dtype=dtype)
        self._whitener: np.ndarray | None = None

    def update(self, mean: np.ndarray, second: np.ndarray) -> None:
        mean = mean.astype(self.mean.dtype)
        second = second.astype(self.second.dtype)
        if self.count == 0:
            self.mean[...] = mean
            self.second[...] = second
        else:
            m = self.momentum
            self.mean[...] = m * self.mean + (1 - m) * mean
            self.second[...] = m * self.second + (1 - m) * second
        self.count += 1
        self._whitener = None

    def whitener(self, iters: int) -> np.ndarray:
        """Cached inverse square root of the running covariance (full mode)."""
        if self._whitener is None:
            self._whitener = inv_sqrt_newton(self.second.astype(np.float64), iters)
        return self._whitener

    def state(self) -> dict[str, np.ndarray]:
        return {
            "mean": self.mean,
            "second": self.second,
            "count": np.array([self.count], dtype=np.float32),
        }

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.mean[...] = state["mean"].reshape(self.mean.shape)
        self.second[...] = state["second"].reshape(self.second.shape)
        self.count = int(state["count"].reshape(-1)[0])
        self._whitener = None


# -- fused normalization ----------------------------------------------------

def _normalize(x: Tensor, reduce_mean, expand, eps: float, op: str) -> tuple[Tensor, np.ndarray, np.ndarray]:
    xd = x.data
    mu = reduce_mean(xd)
    xc = xd - expand(mu)
    var = reduce_mean(xc * xc)
    sigma = expand(np.sqrt(var + eps))
    y = xc / sigma

    def back(g):
        gy = reduce_mean(g * y)
        return ((g - expand(reduce_mean(g)) - y * expand(gy)) / sigma,)

    return Tensor._from_op(y, (x,), back, op), mu, var


def effective_grid(height: int, width: int, lam: int) -> RegionGrid:
    """Grid for a feature map, capping ``lam`` so every region is at least 2x2."""
    lam_eff = max(1, min(lam, height // 2, width // 2))
    return make_grid(height, width, lam_eff)


def lin_forward(f: Tensor, cfg: NormConfig, grid: RegionGrid | None = None) -> Tensor:
    """Per sample, region and channel: subtract the mean, divide by sqrt(var + eps)."""
    f = as_tensor(f)
    n, c, h, w = f.shape
    if grid is None:
        if min(h, w) < cfg.lam:
            raise ValueError(f"feature map {h}x{w} smaller than lambda={cfg.lam}")
        grid = make_grid(h, w, cfg.lam)
    grid.check(h, w)
    y, _, _ = _normalize(
        f, lambda a: region_mean(a, grid), lambda r: region_expand(r, grid), cfg.eps, "lin"
    )
    return y


def bn_forward(f: Tensor, running: RunningMoments, training: bool, eps: float = 1e-5) -> Tensor:
    """Batch normalization without affine parameters."""
    f = as_tensor(f)
    if training:
        if f.shape[0] < 2:
            raise ValueError("batch normalization in training mode needs N >= 2")
        y, mu, var = _normalize(
            f,
            lambda a: a.mean(axis=(0, 2, 3), keepdims=True),
            lambda r: r,
            eps,
            "bn",
        )
        running.update(mu.reshape(-1), var.reshape(-1) + eps)
        return y
    mean = running.mean.astype(f.dtype)[None, :, None, None]
    scale = (1.0 / np.sqrt(running.second.astype(np.float64))).astype(f.dtype)[None, :, None, None]
    return (f - Tensor(mean)) * Tensor(scale)


def gln(f: Tensor, running: RunningMoments, cfg: NormConfig, training: bool, grid: RegionGrid | None = None) -> Tensor:
    return lin_forward(bn_forward(f, running, training, cfg.eps), cfg, grid)


# -- whitening ----------------------------------------------------------------

def whiten(fm: np.ndarray, mu: np.ndarray, inv_sqrt: np.ndarray) -> np.ndarray:
    """Apply ``inv_sqrt @ (F - mu 1^T)`` to a ``C x M`` value matrix."""
    return inv_sqrt @ (fm - mu[:, None])


def _region_groups(grid: RegionGrid) -> dict:
    """Regions bucketed by (rows, cols) so equal-sized blocks can be batched."""
    groups: dict = {}
    for r, rs, cs in grid.slices():
        groups.setdefault((rs.stop - rs.start, cs.stop - cs.start), []).append((r, rs, cs))
    return groups


def region_gather(f: Tensor, members) -> Tensor:
    """Stack equal-sized regions into ``N x G x C x M`` (M = region pixels)."""
    x = f.data
    n, c = x.shape[:2]
    out = np.stack([x[:, :, rs, cs].reshape(n, c, -1) for _, rs, cs in members], axis=1)

    def back(g):
        gx = np.zeros_like(x)
        for k, (_, rs, cs) in enumerate(members):
            gx[:, :, rs, cs] = g[:, k].reshape(n, c, rs.stop - rs.start, -1)
        return (gx,)

    return Tensor._from_op(out, (f,), back, "region_gather")


def region_assemble(parts, groups, shape) -> Tensor:
    """Inverse of :func:`region_gather` over all groups: write blocks into an ``N x C x H x W`` map."""
    n, c = shape[:2]
    out = np.empty(shape, dtype=parts[0].dtype)
    for part, members in zip(parts, groups):
        for k, (_, rs, cs) in enumerate(members):
            out[:, :, rs, cs] = part.data[:, k].reshape(n, c, rs.stop - rs.start, -1)

    def back(g):
        grads = []
        for members in groups:
            grads.append(np.stack([g[:, :, rs, cs].reshape(n, c, -1) for _, rs, cs in members], axis=1))
        return tuple(grads)

    return Tensor._from_op(out, tuple(parts), back, "region_assemble")


def _whiten_blocks(x: Tensor, eps: float, iters: int, method: str) -> Tensor:
    """Whiten ``... x C x M`` blocks with their own channel covariance.

    With fewer pixels than channels (M < C) the Newton polynomial is run on
    the M x M Gram matrix instead: ``A Xc = Xc (K + eps I)`` for
    ``A = Xc Xc^T / M + eps I`` and ``K = Xc^T Xc / M``, so every polynomial
    in ``A`` applied to ``Xc`` equals ``Xc`` times the same polynomial in
    ``K + eps I``; the trace differs by ``(C - M) eps``.
    """
    c, m = x.shape[-2:]
    xc = x - x.mean(axis=-1, keepdims=True)
    if method == "eig":
        cov = np.matmul(xc.data, np.swapaxes(xc.data, -1, -2)) / m + eps * np.eye(c)
        flat = cov.reshape(-1, c, c).astype(np.float64)
        w = np.stack([inv_sqrt_eig(a) for a in flat]).reshape(cov.shape).astype(x.dtype)
        return matmul(Tensor(w), xc)
    if method != "newton":
        raise ValueError(f"unknown inverse-sqrt method {method!r}")
    if m < c:
        k = matmul(swap_last(xc), xc) * (1.0 / m) + Tensor(eps * np.eye(m, dtype=x.dtype))
        s = trace(k) + (c - m) * eps
        y = _newton_poly(k * power(s, -1.0), iters)
        return matmul(xc, y) * power(s, -0.5)
    cov = matmul(xc, swap_last(xc)) * (1.0 / m) + Tensor(eps * np.eye(c, dtype=x.dtype))
    return matmul(inv_sqrt_newton_t(cov, iters), xc)


def _newton_poly(an: Tensor, iters: int) -> Tensor:
    three_eye = Tensor(3.0 * np.eye(an.shape[-1], dtype=an.dtype))
    y = scalar_mul(three_eye - an, 0.5)
    for _ in range(iters - 1):
        y = scalar_mul(matmul(y, three_eye - matmul(matmul(y, y), an)), 0.5)
    return y


def _whiten_regions(f: Tensor, grid: RegionGrid, eps: float, iters: int, method: str = "newton") -> Tensor:
    groups = list(_region_groups(grid).values())
    parts = [_whiten_blocks(region_gather(f, members), eps, iters, method) for members in groups]
    return region_assemble(parts, groups, f.shape)


def liw_forward(f: Tensor, cfg: NormConfig, grid: RegionGrid | None = None, method: str = "newton") -> Tensor:
    """Whiten every region of every sample with its own channel covariance."""
    f = as_tensor(f)
    n, c, h, w = f.shape
    if grid is None:
        grid = make_grid(h, w, cfg.lam)
    grid.check(h, w)
    if grid.counts().min() < 2:
        raise ValueError("local whitening needs at least two pixels per region")
    return _whiten_regions(f, grid, cfg.eps, cfg.newton_t, method)


def bw_forward(f: Tensor, running: RunningMoments, training: bool, cfg: NormConfig) -> Tensor:
    """Whiten with the covariance of all ``N*H*W`` pixel vectors in the batch."""
    f = as_tensor(f)
    n, c, h, w = f.shape
    if training:
        # fold the batch into the row axis so the whole batch is one region
        folded = reshape(transpose(f, (1, 0, 2, 3)), (c, n * h * w))
        y = _whiten_blocks(folded, cfg.eps, cfg.newton_t, "newton")
        cc = batch_cov(f.data, cfg.eps)
        running.update(cc.mu, cc.cov)
        return transpose(reshape(y, (c, n, h, w)), (1, 0, 2, 3))
    wmat = Tensor(running.whitener(cfg.newton_t).astype(f.dtype))
    centered = f - Tensor(running.mean.astype(f.dtype)[None, :, None, None])
    y = matmul(wmat, reshape(centered, (n, c, h * w)))
    return reshape(y, (n, c, h, w))


def glw(f: Tensor, running: RunningMoments, cfg: NormConfig, training: bool, grid: RegionGrid | None = None) -> Tensor:
    return liw_forward(bw_forward(f, running, training, cfg), cfg, grid)


class DDRLayer:
    """Stateful wrapper applying the configured variant to a feature map."""

    def __init__(self, channels: int, cfg: NormConfig, dtype=np.float32):
        self.cfg = cfg
        mode = "full" if cfg.variant == "glw" else "diagonal"
        self.running = RunningMoments(channels, mode=mode, dtype=dtype)

    def __call__(self, f: Tensor, training: bool) -> Tensor:
        if self.cfg.variant == "none":
            return f
        grid = effective_grid(f.shape[2], f.shape[3], self.cfg.lam)
        if self.cfg.variant == "gln":
            return gln(f, self.running, self.cfg, training, grid)
        return glw(f, self.running, self.cfg, training, grid)
