"""Region grids and channel-wise mean / variance / covariance statistics.

These are the style proxies: per-region, per-channel first and second
moments of an image or feature map. All functions here are plain numpy and
non-differentiable; the differentiable counterparts used inside the network
live in :mod:`donanet.ddr`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

DEFAULT_EPS = 1e-5


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _bands(extent: int, lam: int) -> np.ndarray:
    size = extent // lam
    starts = np.arange(lam) * size
    return np.append(starts, extent)


@dataclass(frozen=True)
class RegionGrid:
    """A ``lam x lam`` tiling of an ``height x width`` plane.

    Bands have ``extent // lam`` rows (columns); the last band takes the
    remainder.
    """

    height: int
    width: int
    lam: int
    row_edges: np.ndarray = field(repr=False, compare=False)
    col_edges: np.ndarray = field(repr=False, compare=False)

    @property
    def num_regions(self) -> int:
        return self.lam * self.lam

    @property
    def row_starts(self) -> np.ndarray:
        return self.row_edges[:-1]

    @property
    def col_starts(self) -> np.ndarray:
        return self.col_edges[:-1]

    @property
    def row_sizes(self) -> np.ndarray:
        return np.diff(self.row_edges)

    @property
    def col_sizes(self) -> np.ndarray:
        return np.diff(self.col_edges)

    @property
    def boxes(self) -> list[tuple[int, int, int, int]]:
        """``(row0, col0, rows, cols)`` for every region, row-major."""
        out = []
        for i in range(self.lam):
            for j in range(self.lam):
                out.append((
                    int(self.row_edges[i]),
                    int(self.col_edges[j]),
                    int(self.row_edges[i + 1] - self.row_edges[i]),
                    int(self.col_edges[j + 1] - self.col_edges[j]),
                ))
        return out

    def slices(self):
        """Yield ``(region_index, row_slice, col_slice)`` in row-major order."""
        r = 0
        for i in range(self.lam):
            for j in range(self.lam):
                yield r, slice(self.row_edges[i], self.row_edges[i + 1]), slice(
                    self.col_edges[j], self.col_edges[j + 1]
                )
                r += 1

    def counts(self) -> np.ndarray:
        """Pixel count per region as a ``lam x lam`` array."""
        return np.outer(self.row_sizes, self.col_sizes)

    def check(self, height: int, width: int) -> None:
        if (height, width) != (self.height, self.width):
            raise ValueError(
                f"grid built for {self.height}x{self.width}, got {height}x{width}"
            )


def make_grid(height: int, width: int, lam: int) -> RegionGrid:
    if not 1 <= lam <= min(height, width):
        raise ValueError(f"lambda={lam} out of range for a {height}x{width} plane")
    return RegionGrid(height, width, lam, _bands(height, lam), _bands(width, lam))


def region_sum(x: np.ndarray, grid: RegionGrid) -> np.ndarray:
    """Sum the last two axes of ``x`` over each region -> ``... x lam x lam``."""
    s = np.add.reduceat(x, grid.row_starts, axis=-2)
    return np.add.reduceat(s, grid.col_starts, axis=-1)


def region_mean(x: np.ndarray, grid: RegionGrid) -> np.ndarray:
    return region_sum(x, grid) / grid.counts().astype(x.dtype)


def region_expand(r: np.ndarray, grid: RegionGrid) -> np.ndarray:
    """Broadcast per-region values ``... x lam x lam`` back to ``... x H x W``."""
    r = np.repeat(r, grid.row_sizes, axis=-2)
    return np.repeat(r, grid.col_sizes, axis=-1)


@dataclass
class ChannelStats:
    """Per-region per-channel means and variances (``eps`` already added).

    ``mu`` and ``var`` have shape ``(regions, channels)``.
    """

    mu: np.ndarray
    var: np.ndarray
    eps: float

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


@dataclass
class ChannelCov:
    mu: np.ndarray
    cov: np.ndarray
    eps: float


def region_channel_stats(f, grid: RegionGrid, eps: float = DEFAULT_EPS) -> ChannelStats:
    """Mean and population variance + ``eps`` per region and channel of a ``C x H x W`` map."""
    x = _arr(f)
    if x.ndim != 3:
        raise ValueError(f"expected C x H x W, got shape {x.shape}")
    grid.check(*x.shape[1:])
    mu = region_mean(x, grid)
    var = region_mean((x - region_expand(mu, grid)) ** 2, grid)
    c = x.shape[0]
    return ChannelStats(
        mu.reshape(c, -1).T.copy(), var.reshape(c, -1).T.copy() + eps, eps
    )


def batch_channel_stats(f, eps: float = DEFAULT_EPS) -> ChannelStats:
    """Per-channel mean / variance pooled over batch and both spatial axes."""
    x = _arr(f)
    if x.ndim != 4 or x.shape[0] < 1:
        raise ValueError(f"expected N x C x H x W, got shape {x.shape}")
    mu = x.mean(axis=(0, 2, 3))
    var = ((x - mu[None, :, None, None]) ** 2).mean(axis=(0, 2, 3))
    return ChannelStats(mu[None, :], var[None, :] + eps, eps)


def _cov_of_columns(m: np.ndarray, eps: float) -> ChannelCov:
    mu = m.mean(axis=1)
    xc = m - mu[:, None]
    cov = xc @ xc.T / m.shape[1]
    cov = 0.5 * (cov + cov.T) + eps * np.eye(m.shape[0], dtype=m.dtype)
    return ChannelCov(mu, cov, eps)


def region_channel_cov(f, grid: RegionGrid, eps: float = DEFAULT_EPS) -> list[ChannelCov]:
    """Channel covariance (+ ``eps * I``) of every region of a ``C x H x W`` map."""
    x = _arr(f)
    grid.check(*x.shape[1:])
    c = x.shape[0]
    return [_cov_of_columns(x[:, rs, cs].reshape(c, -1), eps) for _, rs, cs in grid.slices()]


def batch_cov(f, eps: float = DEFAULT_EPS) -> ChannelCov:
    """Channel covariance over all ``N*H*W`` pixel vectors of a batch."""
    x = _arr(f)
    n, c, h, w = x.shape
    if n * h * w < 2:
        raise ValueError("batch_cov needs at least two pixel vectors")
    return _cov_of_columns(x.transpose(1, 0, 2, 3).reshape(c, -1), eps)


STYLE_HEADER = ("region", "channel", "mu_a", "std_a", "mu_b", "std_b")


def style_report(pair, lambda_prime: int) -> list[tuple]:
    """Style table for an object with ``xa`` / ``xb`` images (e.g. an ImagePairSample)."""
    return style_report_images(pair.xa, pair.xb, lambda_prime)


def style_report_images(xa, xb, lambda_prime: int) -> list[tuple]:
    """Per-region per-channel ``(region, channel, mu_a, std_a, mu_b, std_b)`` rows."""
    a, b = _arr(xa), _arr(xb)
    if a.shape != b.shape:
        raise ValueError(f"image size mismatch {a.shape} vs {b.shape}")
    grid = make_grid(a.shape[1], a.shape[2], lambda_prime)
    # eps=0: the reported std leaves out the regulariser
    sa = region_channel_stats(a, grid, 0.0)
    sb = region_channel_stats(b, grid, 0.0)
    std_a, std_b = np.sqrt(sa.var), np.sqrt(sb.var)
    rows = []
    for r in range(grid.num_regions):
        for c in range(a.shape[0]):
            rows.append((r, c, sa.mu[r, c], std_a[r, c], sb.mu[r, c], std_b[r, c]))
    return rows


def write_style_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STYLE_HEADER)
        for r, c, *vals in rows:
            w.writerow([r, c, *(f"{float(v):.9g}" for v in vals)])
