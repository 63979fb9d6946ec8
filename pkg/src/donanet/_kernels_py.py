"""Pure-numpy versions of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled versions are benchmarked and tested against.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride):
    """Unfold a padded ``N x C x Hp x Wp`` array into ``(C*k*k, N*Ho*Wo)`` columns."""
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im(cols, shape, k, stride):
    """Adjoint of :func:`im2col`: scatter-add columns back into a padded array."""
    n, c, hp, wp = shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += (
                cols[:, ki, kj].transpose(1, 0, 2, 3)
            )
    return out


def maxpool2_forward(x):
    """2x2 non-overlapping max pool; returns the pooled array and the in-window argmax."""
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    # np.argmax returns the first maximal index, i.e. row-major tie-breaking
    idx = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(grad, idx, shape):
    n, c, h, w = shape
    ho, wo = grad.shape[2], grad.shape[3]
    slots = np.zeros((n, c, ho, wo, 4), dtype=grad.dtype)
    np.put_along_axis(slots, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    slots = slots.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros(shape, dtype=grad.dtype)
    out[:, :, :2 * ho, :2 * wo] = slots.reshape(n, c, 2 * ho, 2 * wo)
    return out
