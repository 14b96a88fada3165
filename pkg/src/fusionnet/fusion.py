"""Channel attention and the five-branch FusionNet."""
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .backbones import Backbone, BackboneSpec
from .nn import BatchNorm2d, Linear, Module
from .tensor import ShapeError

BANDS = ("B11", "B10", "B7", "B6", "B76")


class ChannelAttention(Module):
    """Shared two-layer MLP over avg- and max-pooled descriptors, applied residually.

    ``A = sigmoid(mlp(avg(F)) + mlp(max(F)))`` and the output is ``F + F * A``.
    The 1x1 convolutions on ``B x C x 1 x 1`` descriptors are realised as
    affine maps on ``B x C``.
    """

    def __init__(self, channels, reduction=4, rng=None):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        if hidden < 1:
            raise ValueError("attention hidden width must be at least 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels = channels
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def mlp(self, v):
        return self.fc2(ops.relu(self.fc1(v)))

    def weights(self, f):
        b, c = f.shape[:2]
        if c != self.channels:
            raise ShapeError(f"attention built for {self.channels} channels, got {f.shape}")
        a = ops.sigmoid(self.mlp(ops.global_avg_pool(f)) + self.mlp(ops.global_max_pool(f)))
        return a.reshape(b, c, 1, 1)

    def forward(self, f):
        return f + f * self.weights(f)


def channel_attention(f, attention):
    return attention(f)


@dataclass
class FusionSpec:
    branch: BackboneSpec = field(default_factory=lambda: BackboneSpec(kind="DGCNN", with_head=False))
    reduction: int = 4
    head_widths: tuple = (512, 256, 128, 64, 2)
    bands: tuple = BANDS
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.branch, dict):
            self.branch = BackboneSpec.from_dict(self.branch)
        self.branch.with_head = False
        self.head_widths = tuple(int(w) for w in self.head_widths)
        self.bands = tuple(self.bands)
        if len(self.bands) != 5:
            raise ValueError("FusionNet has exactly five branches")
        if len(self.head_widths) != 5 or self.head_widths[-1] != 2:
            raise ValueError("fusion head is five stages ending in 2 classes")

    @property
    def fused_channels(self):
        return 5 * self.branch.feature_dim

    def to_dict(self):
        return {"branch": self.branch.to_dict(), "reduction": self.reduction,
                "head_widths": list(self.head_widths), "bands": list(self.bands), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"branch", "reduction", "head_widths", "bands", "seed"}
        if unknown:
            raise ValueError(f"unknown FusionSpec keys: {sorted(unknown)}")
        return cls(**d)


class FusionHead(Module):
    """Five 1x1 stages on the fused ``B x C`` vector: (affine -> ReLU -> BN) x 4, then affine."""

    def __init__(self, cin, widths, rng):
        super().__init__()
        self.stages = []
        self.norms = []
        for i, w in enumerate(widths):
            self.stages.append(Linear(cin, w, rng=rng))
            if i < len(widths) - 1:
                self.norms.append(BatchNorm2d(w))
            cin = w

    def forward(self, v):
        for i, stage in enumerate(self.stages):
            v = stage(v)
            if i < len(self.norms):
                b, c = v.shape
                v = self.norms[i](ops.relu(v).reshape(b, c, 1, 1)).reshape(b, c)
        return v


class FusionNet(Module):
    def __init__(self, spec=None):
        super().__init__()
        self.spec = spec = FusionSpec() if spec is None else spec
        rng = np.random.default_rng(spec.seed)
        self.branches = []
        for i in range(5):
            bspec = BackboneSpec.from_dict({**spec.branch.to_dict(), "seed": int(rng.integers(2**31))})
            self.branches.append(Backbone(bspec))
        c = spec.fused_channels
        self.attention = ChannelAttention(c, spec.reduction, rng=rng)
        self.head = FusionHead(c, spec.head_widths, rng)

    def fused(self, inputs):
        """Concatenated branch features ``B x 5*CNN_out x 1 x 1`` before attention."""
        if len(inputs) != 5:
            raise ShapeError(f"FusionNet needs five band inputs, got {len(inputs)}")
        ref = inputs[0].shape
        for i, x in enumerate(inputs):
            if x.shape != ref:
                raise ShapeError(f"branch {i} ({self.spec.bands[i]}) input {x.shape} does not match {ref}")
        hs = [br.features(x) for br, x in zip(self.branches, inputs)]
        b = ref[0]
        return ops.concat([h.reshape(b, h.shape[1], 1, 1) for h in hs], axis=1)

    def forward(self, inputs):
        f = self.attention(self.fused(inputs))
        b, c = f.shape[:2]
        return self.head(f.reshape(b, c))


def fusion_forward(x11, x10, x7, x6, x76, model):
    return model([x11, x10, x7, x6, x76])
