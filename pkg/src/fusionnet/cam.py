"""Class activation maps for GAP + linear-head backbones."""
import struct

import numpy as np

from . import ops
from .fusion import FusionNet
from .tensor import Tensor, no_grad


class CAMUndefined(ValueError):
    pass


def normalise_map(m):
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    lo, hi = float(m.min()), float(m.max())
    if not hi > lo:
        return np.zeros_like(m, dtype=np.float64)
    return (m - lo) / (hi - lo)


def cam_from_maps(fmaps, weights, out_size):
    """``sum_c weights[c] * fmaps[c]``, bilinearly upsampled and min-max normalised.

    ``fmaps`` is ``C x h x w``; ``out_size`` is ``(H, W)``.
    """
    raw = np.tensordot(np.asarray(weights, dtype=np.float64), fmaps, axes=(0, 0))
    return normalise_map(ops.bilinear_resize(raw, *out_size))


def cam(model, x, target=None):
    """CAM of one normalised ``3 x H x W`` input for the predicted (or ``target``) class."""
    if isinstance(model, FusionNet):
        raise CAMUndefined("CAM undefined for fusion head; use branch_cam for per-branch maps")
    if model.head is None:
        raise CAMUndefined("CAM needs a linear head over global-average-pooled features")
    x = np.asarray(x, dtype=np.float64)
    model.eval()
    with no_grad():
        fmaps = model.feature_maps(Tensor(x[None]))
        z = model.head(ops.global_avg_pool(fmaps)).data[0]
    cls = int(np.argmax(z)) if target is None else int(target)
    return cam_from_maps(fmaps.data[0], model.head.weight.data[cls], x.shape[1:]), cls


def branch_cam(model, xs, branch, target=None):
    """Per-branch map for a FusionNet.

    The channel weights are the gradient of the class logit with respect to
    that branch's pooled features, which reduces to the head weights when
    the head is linear.
    """
    xs = [np.asarray(x, dtype=np.float64)[None] for x in xs]
    model.eval()
    br = model.branches[branch]
    fmaps = br.feature_maps(Tensor(xs[branch]))
    fmaps_leaf = Tensor(fmaps.data, requires_grad=True)
    h = ops.global_avg_pool(fmaps_leaf)
    others = [b.features(Tensor(x)) if i != branch else h for i, (b, x) in enumerate(zip(model.branches, xs))]
    fused = ops.concat([o.reshape(1, o.shape[1], 1, 1) for o in others], axis=1)
    logits = model.head(model.attention(fused).reshape(1, -1))
    cls = int(np.argmax(logits.data[0])) if target is None else int(target)
    logits[0, cls].backward()
    weights = fmaps_leaf.grad[0].sum(axis=(1, 2))
    return cam_from_maps(fmaps.data[0], weights, xs[branch].shape[2:]), cls


def write_pgm16(path, heatmap):
    """Binary 16-bit PGM (big-endian samples) plus a little-endian float32 ``.f32`` sidecar."""
    h, w = heatmap.shape
    vals = np.clip(np.round(np.asarray(heatmap) * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(vals.tobytes())
    with open(f"{path}.f32", "wb") as fh:
        fh.write(struct.pack("<II", h, w))
        fh.write(np.asarray(heatmap, dtype="<f4").tobytes())


def read_pgm16(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w)
