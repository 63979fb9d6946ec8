"""Differentiable image operators: convolution, pooling, resizing, channel concat."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, concat


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, ``N x Cin x H x W`` -> ``N x Cout x H'' x W''``."""
    n, cin, h, wd = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    if k != k2:
        raise ValueError("conv2d: only square kernels are supported")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be positive and pad non-negative")
    if k > h + 2 * pad or k > wd + 2 * pad:
        raise ValueError(f"conv2d: kernel {k} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    xd = x.data
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    padded_shape = xd.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cols = kernels.im2col(xd, k, stride)
    w2 = w.data.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, n, ho, wo)
    if b is not None:
        out += b.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = kernels.col2im(w2.T @ g2, padded_shape, k, stride)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return Tensor._from_op(out, parents, back, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pool (floor on odd extents); ties go to the first element."""
    out, idx = kernels.maxpool2_forward(x.data)
    shape = x.shape
    return Tensor._from_op(
        out, (x,), lambda g: (kernels.maxpool2_backward(g, idx, shape),), "maxpool2"
    )


@lru_cache(maxsize=64)
def _interp_matrix(src: int, dst: int, dtype_str: str) -> np.ndarray:
    # align-corners: output i samples source coordinate i*(src-1)/(dst-1)
    m = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        pos = i * (src - 1) / (dst - 1) if dst > 1 else 0.0
        i0 = min(int(np.floor(pos)), src - 1)
        frac = pos - i0
        i1 = min(i0 + 1, src - 1)
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m.astype(dtype_str)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes with align-corners sampling."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: target size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return Tensor._from_op(x.data.copy(), (x,), lambda g: (g,), "resize")
    rh = _interp_matrix(h, out_h, x.dtype.str)
    rw = _interp_matrix(w, out_w, x.dtype.str)
    out = np.matmul(np.matmul(rh, x.data), rw.T)
    return Tensor._from_op(out, (x,), lambda g: (np.matmul(np.matmul(rh.T, g), rw),), "resize")


def concat_channels(xs) -> Tensor:
    """Stack ``N x Ci x H x W`` tensors along the channel axis in argument order."""
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != 4 or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: spatial mismatch {ref} vs {x.shape}")
    if len(xs) == 1:
        return xs[0]
    return concat(xs, axis=1)
