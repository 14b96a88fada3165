"""CNN5 / DGCNN backbones and the single-component ablation variants.

A backbone is five conv stages (conv -> ReLU -> pool -> batch norm) followed
by an optional averaged dilated block, global average pooling and an
optional linear head. The DGCNN switches on three components relative to
CNN5: a Gabor first layer, MixPool with a decaying max share, and the
dilated block. MPCNN5, GCNN5 and DCNN5 each switch on exactly one.
"""
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import ops
from .gabor import GaborBankConfig, init_bank
from .layers import DEFAULT_RATES, DilatedBlock, alpha_schedule, check_rates, mix_pool
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import ShapeError

VARIANTS = {
    "CNN5": dict(gabor=False, mixpool=False, dilated=False),
    "MPCNN5": dict(gabor=False, mixpool=True, dilated=False),
    "GCNN5": dict(gabor=True, mixpool=False, dilated=False),
    "DCNN5": dict(gabor=False, mixpool=False, dilated=True),
    "DGCNN": dict(gabor=True, mixpool=True, dilated=True),
}
N_LAYERS = 5


@dataclass
class BackboneSpec:
    kind: str = "DGCNN"
    channels: tuple = (32, 64, 128, 128, 128)
    kernel_size: int = 3
    pool_window: int = 2
    pool_stride: int = 2
    pool_layers: tuple = (True, True, True, True, True)
    gabor: GaborBankConfig = field(default_factory=GaborBankConfig)
    rates: tuple = DEFAULT_RATES
    num_classes: int = 2
    with_head: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.gabor, dict):
            self.gabor = GaborBankConfig(**self.gabor)
        self.channels = tuple(int(c) for c in self.channels)
        self.pool_layers = tuple(bool(p) for p in self.pool_layers)
        self.rates = check_rates(self.rates)
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown backbone kind {self.kind!r}; choose from {sorted(VARIANTS)}")
        if len(self.channels) != N_LAYERS or len(self.pool_layers) != N_LAYERS:
            raise ValueError("a backbone has exactly five convolutional layers")

    @property
    def components(self):
        return VARIANTS[self.kind]

    @property
    def feature_dim(self):
        return self.channels[-1]

    @property
    def layer_widths(self):
        """Output width per stage; a Gabor first layer is as wide as its bank."""
        widths = list(self.channels)
        if self.components["gabor"]:
            widths[0] = self.gabor.n_filters
        return tuple(widths)

    @property
    def n_pools(self):
        return sum(self.pool_layers)

    @property
    def alphas(self):
        """Per-pooling-layer max share (all 1.0 without MixPool)."""
        if self.components["mixpool"]:
            return alpha_schedule(self.n_pools) if self.n_pools else ()
        return (1.0,) * self.n_pools

    def stage_shapes(self, h, w):
        """Build-time shape inference: spatial size after each stage."""
        out = []
        for pooled in self.pool_layers:
            if pooled:
                if h < self.pool_window or w < self.pool_window:
                    raise ShapeError(f"input too small: {h}x{w} before a {self.pool_window}-window pool")
                nh = (h - self.pool_window) // self.pool_stride + 1
                nw = (w - self.pool_window) // self.pool_stride + 1
                if (nh - 1) * self.pool_stride + self.pool_window != h or \
                        (nw - 1) * self.pool_stride + self.pool_window != w:
                    raise ShapeError(f"spatial size {h}x{w} is not divisible by the pooling schedule")
                h, w = nh, nw
            out.append((h, w))
        return out

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["pool_layers"] = list(self.pool_layers)
        d["rates"] = list(self.rates)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown BackboneSpec keys: {sorted(unknown)}")
        return cls(**d)


class Backbone(Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        comp = spec.components
        widths = spec.layer_widths
        self.gabor = None
        self.convs = []
        cin = 3
        for i, cout in enumerate(widths):
            if i == 0 and comp["gabor"]:
                g = spec.gabor
                self.gabor = init_bank(g.n_freq, g.n_orient, g.kernel_size, seed=int(rng.integers(2**31)))
            else:
                self.convs.append(Conv2d(cin, cout, spec.kernel_size, rng=rng))
            cin = cout
        self.norms = [BatchNorm2d(c) for c in widths]
        self.dilated = DilatedBlock(cin, cin, spec.rates, rng=rng) if comp["dilated"] else None
        self.head = Linear(cin, spec.num_classes, rng=rng) if spec.with_head else None

    def feature_maps(self, x):
        """Final-stage maps (after the dilated block when present)."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"backbone expects B x 3 x H x W, got {x.shape}")
        spec = self.spec
        alphas = iter(spec.alphas)
        convs = iter(self.convs)
        for i in range(N_LAYERS):
            if i == 0 and self.gabor is not None:
                x = self.gabor(x)
            else:
                x = next(convs)(x)
            x = ops.relu(x)
            if spec.pool_layers[i]:
                x = mix_pool(x, next(alphas), spec.pool_window, spec.pool_stride)
            x = self.norms[i](x)
        if self.dilated is not None:
            x = self.dilated(x)
        return x

    def features(self, x):
        return ops.global_avg_pool(self.feature_maps(x))

    def forward(self, x):
        """Return ``(features, logits)``; logits is None without a head."""
        feats = self.features(x)
        return feats, (self.head(feats) if self.head is not None else None)


def build_backbone(kind="DGCNN", **overrides):
    return Backbone(BackboneSpec(kind=kind, **overrides))


def n_parameters(module):
    return sum(p.size for p in module.parameters())
