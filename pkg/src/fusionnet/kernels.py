"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy versions
take over. Set ``FUSIONNET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FUSIONNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def _contig(a):
    return a if a.flags.c_contiguous else a.copy(order="C")


def im2col(xp, k, stride, dilation, ho, wo):
    return _impl.im2col(_contig(xp), k, stride, dilation, ho, wo)


def col2im(cols, b, c, hp, wp, k, stride, dilation, ho, wo):
    return _impl.col2im(_contig(cols), b, c, hp, wp, k, stride, dilation, ho, wo)


def maxpool_forward(x, window, stride):
    return _impl.maxpool_forward(_contig(x), window, stride)


def maxpool_backward(grad, arg, in_shape, window, stride):
    return _impl.maxpool_backward(_contig(grad), _contig(arg), in_shape, window, stride)


def avgpool_forward(x, window, stride):
    return _impl.avgpool_forward(_contig(x), window, stride)


def avgpool_backward(grad, in_shape, window, stride):
    return _impl.avgpool_backward(_contig(grad), in_shape, window, stride)


def use_backend(name):
    """Switch backend at runtime (``"cython"`` or ``"python"``); used by benchmarks."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _pykernels, "python"
    elif name == "cython":
        from . import _ckernels
        _impl, BACKEND = _ckernels, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
