"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``DONANET_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DONANET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py


def _contig(a):
    return a if a.flags.c_contiguous else np.ascontiguousarray(a)


def im2col(xp, k, stride):
    return _impl.im2col(_contig(xp), k, stride)


def col2im(cols, shape, k, stride):
    return _impl.col2im(_contig(cols), tuple(shape), k, stride)


def maxpool2_forward(x):
    return _impl.maxpool2_forward(_contig(x))


def maxpool2_backward(grad, idx, shape):
    return _impl.maxpool2_backward(_contig(grad), _contig(idx), tuple(shape))
