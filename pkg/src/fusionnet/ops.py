"""Differentiable primitives the layers are built from."""
import numpy as np

from . import kernels
from .tensor import DTYPE, ShapeError, Tensor, as_tensor


def conv_output_size(size, k, stride=1, padding=0, dilation=1):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2-D cross-correlation over a ``B x Cin x H x W`` batch, zero padded."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if k != k2:
        raise ShapeError(f"conv2d needs square kernels, got {weight.shape}")
    if k < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d needs k, stride, dilation >= 1 and padding >= 0")
    span = dilation * (k - 1) + 1
    if h + 2 * padding < span or w + 2 * padding < span:
        raise ShapeError(f"conv2d input {x.shape} too small for dilated kernel span {span}")
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2:]
    cols = kernels.im2col(xp, k, stride, dilation, ho, wo)
    w2 = weight.data.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        dx = dw = db = None
        if x.requires_grad:
            dxp = kernels.col2im(w2.T @ g2, b, cin, hp, wp, k, stride, dilation, ho, wo)
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        if weight.requires_grad:
            dw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            db = g2.sum(axis=1)
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, back, "conv2d")


def pool2d(x, mode="max", window=2, stride=None):
    """Max or average pooling without padding."""
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ValueError("pool2d needs window, stride >= 1")
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects B x C x H x W, got {x.shape}")
    shape = x.shape
    if shape[2] < window or shape[3] < window:
        raise ShapeError(f"pool window {window} larger than spatial dims {shape[2:]}")
    if mode == "max":
        out, arg = kernels.maxpool_forward(x.data, window, stride)
        return Tensor._result(out, (x,), lambda g: (kernels.maxpool_backward(g, arg, shape, window, stride),),
                              "maxpool2d")
    if mode == "avg":
        out = kernels.avgpool_forward(x.data, window, stride)
        return Tensor._result(out, (x,), lambda g: (kernels.avgpool_backward(g, shape, window, stride),),
                              "avgpool2d")
    raise ValueError(f"unknown pooling mode {mode!r}")


def relu(x):
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    y = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape ``B x in``; a 1x1 conv on flattened maps."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        return g @ weight.data, g.T @ x.data, (g.sum(axis=0) if bias is not None else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, back, "linear")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for i, t in enumerate(tensors):
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != axis):
            raise ShapeError(f"concat: tensor {i} has shape {t.shape}, incompatible with {ref}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis),
                          tuple(tensors), back, "concat")


def channel_slice(x, start, stop):
    """Channels ``start:stop`` of a ``B x C x ...`` tensor."""
    return x[:, start:stop]


def channel_sum(x):
    """Sum over the channel axis, keeping it as size 1."""
    return x.sum(axis=1, keepdims=True)


def global_avg_pool(x):
    """``B x C x H x W`` -> ``B x C``."""
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3))
    shape = x.shape
    return Tensor._result(out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), shape).copy(),),
                          "global_avg_pool")


def global_max_pool(x):
    """``B x C x H x W`` -> ``B x C``; gradient goes to the first maximum."""
    b, c, h, w = x.shape
    flat = x.data.reshape(b, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def back(g):
        dx = np.zeros((b, c, h * w), dtype=g.dtype)
        np.put_along_axis(dx, arg[:, :, None], g[:, :, None], axis=2)
        return (dx.reshape(b, c, h, w),)
    return Tensor._result(out, (x,), back, "global_max_pool")


def adaptive_pool(x, mode="avg", output_size=1):
    """Adaptive pooling to a 1x1 target, returned as ``B x C x 1 x 1``."""
    if output_size != 1:
        raise NotImplementedError("only 1x1 adaptive pooling is supported")
    b, c = x.shape[:2]
    pooled = global_avg_pool(x) if mode == "avg" else global_max_pool(x)
    return pooled.reshape(b, c, 1, 1)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalisation over ``(B, H, W)``.

    In training mode the batch statistics are used and the running buffers
    (plain numpy arrays) are updated in place with the unbiased variance.
    """
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    g = gamma.data.reshape(bshape)
    if training:
        n = x.data.size // c
        if n < 2:
            raise ShapeError(f"batch_norm in training mode needs more than one value per channel, got {x.shape}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / (n - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
        out = g * xhat + beta.data.reshape(bshape)

        def back(go):
            dgamma = (go * xhat).sum(axis=axes)
            dbeta = go.sum(axis=axes)
            dxhat = go * g
            dx = (inv.reshape(bshape) / n) * (
                n * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
            return dx, dgamma, dbeta
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv.reshape(bshape)
        out = g * xhat + beta.data.reshape(bshape)

        def back(go):
            return go * g * inv.reshape(bshape), (go * xhat).sum(axis=axes), go.sum(axis=axes)
    return Tensor._result(out, (x, gamma, beta), back, "batch_norm")


def weighted_cross_entropy(logits, targets, class_weights):
    """Class-weighted mean of the softmax negative log-likelihood.

    The per-sample losses are weighted by ``class_weights[target]`` and
    divided by the sum of those weights.
    """
    targets = np.asarray(targets, dtype=np.int64)
    w = np.asarray(class_weights, dtype=DTYPE)
    if np.any(w <= 0):
        raise ValueError(f"class weights must be strictly positive, got {list(w)}")
    n, k = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if np.any(targets < 0) or np.any(targets >= k) or k != len(w):
        raise ValueError(f"target indices must lie in [0, {len(w) - 1}], got {targets.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(n), targets]
    sw = w[targets]
    total = sw.sum()
    loss = np.asarray((sw * nll).sum() / total)

    def back(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(n), targets] -= 1.0
        return (g * p * (sw / total)[:, None],)
    return Tensor._result(loss, (logits,), back, "weighted_cross_entropy")


def bilinear_resize(img, out_h, out_w):
    """Bilinear resize of a 2-D array with half-pixel centres (edge clamped)."""
    h, w = img.shape

    def coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0, n_in - 1)
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    y0, y1, fy = coords(out_h, h)
    x0, x1, fx = coords(out_w, w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]
