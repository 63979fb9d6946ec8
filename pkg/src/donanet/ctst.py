"""Cross-temporal style transformation.

Each image is normalized region by region (per channel) and then
re-scaled with another image's region statistics: the other date of the
same pair (UST, BST) or the two dates of another pair in the batch (IBST).
The transformation is purely photometric; pixels never move, so change
masks carry over unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .stats import ChannelStats, RegionGrid, make_grid, region_expand, region_mean
from .tensor import Tensor

# image-space regulariser; small enough that near-flat regions (noise-level
# variance ~1e-4) still receive the donor statistics to within 1e-4
IMAGE_EPS = 1e-8


class StyleMode(enum.Enum):
    UST_A_TO_B = "ust_a2b"
    UST_B_TO_A = "ust_b2a"
    BST = "bst"
    IBST = "ibst"

    @property
    def family(self) -> str:
        return "ust" if self in (StyleMode.UST_A_TO_B, StyleMode.UST_B_TO_A) else self.value


@dataclass
class StylizedPair:
    xa: np.ndarray
    xb: np.ndarray
    mode: StyleMode
    donor_id: int | None = None


def _img(x) -> np.ndarray:
    x = x.data if isinstance(x, Tensor) else np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected a C x H x W image, got shape {x.shape}")
    return x.astype(np.float64, copy=False)


def _pair(pair):
    if hasattr(pair, "xa"):
        return _img(pair.xa), _img(pair.xb)
    xa, xb = pair
    return _img(xa), _img(xb)


def _region_stats(x: np.ndarray, grid: RegionGrid, eps: float):
    mu = region_mean(x, grid)
    var = region_mean((x - region_expand(mu, grid)) ** 2, grid) + eps
    return mu, var


def _to_stats(mu: np.ndarray, var: np.ndarray, eps: float) -> ChannelStats:
    c = mu.shape[0]
    return ChannelStats(mu.reshape(c, -1).T.copy(), var.reshape(c, -1).T.copy(), eps)


def normalize_local_image(x, grid: RegionGrid, eps: float = IMAGE_EPS) -> tuple[np.ndarray, ChannelStats]:
    """Region-wise standardized image plus the statistics that were removed."""
    x = _img(x)
    grid.check(*x.shape[1:])
    mu, var = _region_stats(x, grid, eps)
    xbar = (x - region_expand(mu, grid)) / region_expand(np.sqrt(var), grid)
    return xbar, _to_stats(mu, var, eps)


def restyle(xbar, donor: ChannelStats, grid: RegionGrid) -> np.ndarray:
    """Give a normalized image the donor's per-region mean and std."""
    xbar = _img(xbar)
    grid.check(*xbar.shape[1:])
    c = xbar.shape[0]
    if donor.mu.shape != (grid.num_regions, c):
        raise ValueError(
            f"donor statistics have shape {donor.mu.shape}, grid expects {(grid.num_regions, c)}"
        )
    lam = grid.lam
    mu = donor.mu.T.reshape(c, lam, lam)
    std = np.sqrt(donor.var).T.reshape(c, lam, lam)
    return xbar * region_expand(std, grid) + region_expand(mu, grid)


def ust(pair, direction: str, grid: RegionGrid, eps: float = IMAGE_EPS) -> StylizedPair:
    """Restyle one date with the other's statistics; ``direction`` is ``"a2b"`` or ``"b2a"``."""
    xa, xb = _pair(pair)
    _same_size(xa, xb)
    if direction == "a2b":
        xbar, _ = normalize_local_image(xa, grid, eps)
        _, sb = normalize_local_image(xb, grid, eps)
        return StylizedPair(restyle(xbar, sb, grid), xb.copy(), StyleMode.UST_A_TO_B)
    if direction == "b2a":
        xbar, _ = normalize_local_image(xb, grid, eps)
        _, sa = normalize_local_image(xa, grid, eps)
        return StylizedPair(xa.copy(), restyle(xbar, sa, grid), StyleMode.UST_B_TO_A)
    raise ValueError(f"direction must be 'a2b' or 'b2a', got {direction!r}")


def bst(pair, grid: RegionGrid, eps: float = IMAGE_EPS) -> StylizedPair:
    """Swap the region statistics of the two dates."""
    xa, xb = _pair(pair)
    _same_size(xa, xb)
    na, sa = normalize_local_image(xa, grid, eps)
    nb, sb = normalize_local_image(xb, grid, eps)
    return StylizedPair(restyle(na, sb, grid), restyle(nb, sa, grid), StyleMode.BST)


def ibst(pair, donor_pair, grid: RegionGrid, eps: float = IMAGE_EPS, donor_id: int | None = None) -> StylizedPair:
    """Restyle A with C's statistics and B with D's, where ``donor_pair = (C, D)``."""
    xa, xb = _pair(pair)
    xc, xd = _pair(donor_pair)
    for other in (xb, xc, xd):
        _same_size(xa, other)
    na, _ = normalize_local_image(xa, grid, eps)
    nb, _ = normalize_local_image(xb, grid, eps)
    _, sc = normalize_local_image(xc, grid, eps)
    _, sd = normalize_local_image(xd, grid, eps)
    return StylizedPair(restyle(na, sc, grid), restyle(nb, sd, grid), StyleMode.IBST, donor_id)


def _same_size(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image size mismatch {a.shape} vs {b.shape}")


def sample_mode(rng: np.random.Generator) -> StyleMode:
    """UST, BST and IBST with probability 1/3 each; UST direction 1/2 each."""
    k = int(rng.integers(3))
    if k == 0:
        return StyleMode.UST_A_TO_B if rng.integers(2) == 0 else StyleMode.UST_B_TO_A
    return StyleMode.BST if k == 1 else StyleMode.IBST


def apply_mode(mode: StyleMode, pair, donor_pair, grid: RegionGrid, eps: float = IMAGE_EPS, donor_id=None) -> StylizedPair:
    if mode is StyleMode.UST_A_TO_B:
        return ust(pair, "a2b", grid, eps)
    if mode is StyleMode.UST_B_TO_A:
        return ust(pair, "b2a", grid, eps)
    if mode is StyleMode.BST:
        return bst(pair, grid, eps)
    return ibst(pair, donor_pair, grid, eps, donor_id)


def stylize_batch(xa: np.ndarray, xb: np.ndarray, rng: np.random.Generator, lambda_prime: int = 8,
                  eps: float = IMAGE_EPS):
    """One sampled mode per pair of an ``N x 3 x H x W`` batch.

    IBST draws its donor from the next pair in the batch (cyclically).
    Returns the stylized batches and the list of (mode, donor index).
    """
    n = xa.shape[0]
    grid = make_grid(xa.shape[2], xa.shape[3], lambda_prime)
    out_a = np.empty_like(xa)
    out_b = np.empty_like(xb)
    record = []
    for j in range(n):
        mode = sample_mode(rng)
        donor = (j + 1) % n
        sp = apply_mode(mode, (xa[j], xb[j]), (xa[donor], xb[donor]), grid, eps,
                        donor if mode is StyleMode.IBST else None)
        out_a[j] = sp.xa
        out_b[j] = sp.xb
        record.append((sp.mode, sp.donor_id))
    return out_a, out_b, record
