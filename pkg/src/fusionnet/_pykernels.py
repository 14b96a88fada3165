"""Pure-numpy versions of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same output layout. ``fusionnet.kernels`` picks one at import time.
"""
import numpy as np


def im2col(xp, k, stride, dilation, ho, wo):
    """Unfold a padded batch into a ``(C*k*k, B*ho*wo)`` column matrix."""
    b, c = xp.shape[:2]
    cols = np.empty((c, k, k, b, ho, wo), dtype=xp.dtype)
    for ki in range(k):
        r0 = ki * dilation
        for kj in range(k):
            c0 = kj * dilation
            tap = xp[:, :, r0:r0 + stride * (ho - 1) + 1:stride,
                     c0:c0 + stride * (wo - 1) + 1:stride]
            cols[:, ki, kj] = tap.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, b * ho * wo)


def col2im(cols, b, c, hp, wp, k, stride, dilation, ho, wo):
    """Adjoint of :func:`im2col`; overlapping taps are summed."""
    cols = cols.reshape(c, k, k, b, ho, wo)
    xp = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for ki in range(k):
        r0 = ki * dilation
        for kj in range(k):
            c0 = kj * dilation
            xp[:, :, r0:r0 + stride * (ho - 1) + 1:stride,
               c0:c0 + stride * (wo - 1) + 1:stride] += cols[:, ki, kj].transpose(1, 0, 2, 3)
    return xp


def _taps(x, window, stride, ho, wo):
    for ki in range(window):
        for kj in range(window):
            yield ki, kj, x[:, :, ki:ki + stride * (ho - 1) + 1:stride,
                            kj:kj + stride * (wo - 1) + 1:stride]


def maxpool_forward(x, window, stride):
    """Return ``(out, arg)`` where ``arg`` is the row-major tap index of the max.

    Ties resolve to the first tap in row-major window order.
    """
    b, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = None
    arg = np.zeros((b, c, ho, wo), dtype=np.int64)
    for ki, kj, tap in _taps(x, window, stride, ho, wo):
        if out is None:
            out = tap.copy()
            continue
        better = tap > out
        out[better] = tap[better]
        arg[better] = ki * window + kj
    return out, arg


def maxpool_backward(grad, arg, in_shape, window, stride):
    ho, wo = grad.shape[2:]
    dx = np.zeros(in_shape, dtype=grad.dtype)
    for ki, kj, view in _taps(dx, window, stride, ho, wo):
        view += np.where(arg == ki * window + kj, grad, 0.0)
    return dx


def avgpool_forward(x, window, stride):
    b, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for _, _, tap in _taps(x, window, stride, ho, wo):
        out += tap
    return out / (window * window)


def avgpool_backward(grad, in_shape, window, stride):
    ho, wo = grad.shape[2:]
    dx = np.zeros(in_shape, dtype=grad.dtype)
    share = grad / (window * window)
    for _, _, view in _taps(dx, window, stride, ho, wo):
        view += share
    return dx
