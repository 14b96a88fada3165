"""MixPool and the averaged multi-dilation block."""
import numpy as np

from . import ops
from .nn import Conv2d, Module
from .tensor import ShapeError

DEFAULT_RATES = (1, 3, 6, 9)


def alpha_schedule(n_layers=5, start=1.0, step=0.2):
    """Per-layer max-pool share: pure max at the lowest layer, minus 0.2 per layer, clamped at 0."""
    if n_layers < 1:
        raise ValueError("alpha schedule needs at least one layer")
    return tuple(max(0.0, round(start - step * i, 12)) for i in range(n_layers))


def mix_pool(x, alpha, window=2, stride=None):
    """``alpha * maxpool(x) + (1 - alpha) * avgpool(x)``."""
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mix_pool alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return ops.pool2d(x, "max", window, stride)
    if alpha == 0.0:
        return ops.pool2d(x, "avg", window, stride)
    return ops.pool2d(x, "max", window, stride) * alpha + ops.pool2d(x, "avg", window, stride) * (1.0 - alpha)


def check_rates(rates):
    rates = tuple(int(r) for r in rates)
    if not rates or any(r < 1 for r in rates) or list(rates) != sorted(set(rates)):
        raise ValueError(f"dilation rates must be positive, distinct and ascending, got {rates}")
    return rates


def dilated_block(x, weights, biases=None, rates=DEFAULT_RATES):
    """Base-rate map plus the mean of the auxiliary dilated maps.

    ``weights[i]`` is the 3x3 kernel of the branch with dilation ``rates[i]``;
    each branch is conv -> ReLU with padding ``rate`` so every map keeps the
    input's spatial size.
    """
    rates = check_rates(rates)
    if len(weights) != len(rates):
        raise ValueError(f"{len(rates)} rates but {len(weights)} branch weights")
    biases = [None] * len(rates) if biases is None else biases
    maps = []
    for w, b, d in zip(weights, biases, rates):
        k = w.shape[-1]
        maps.append(ops.relu(ops.conv2d(x, w, b, 1, d * (k - 1) // 2, d)))
    base, aux = maps[0], maps[1:]
    for i, m in enumerate(aux):
        if m.shape != base.shape:
            raise RuntimeError(f"dilated branch {i + 1} produced {m.shape}, base map is {base.shape}")
    if not aux:
        return base
    total = aux[0]
    for m in aux[1:]:
        total = total + m
    return base + total / float(len(aux))


class DilatedBlock(Module):
    """One independent 3x3 conv per dilation rate, combined by :func:`dilated_block`."""

    def __init__(self, cin, cout, rates=DEFAULT_RATES, k=3, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.rates = check_rates(rates)
        self.branches = [Conv2d(cin, cout, k, dilation=d, rng=rng) for d in self.rates]

    def forward(self, x):
        if x.shape[1] != self.branches[0].weight.shape[1]:
            raise ShapeError(f"dilated block expects {self.branches[0].weight.shape[1]} channels, got {x.shape}")
        return dilated_block(x, [b.weight for b in self.branches], [b.bias for b in self.branches], self.rates)
