"""Minimal module system: parameters, buffers, train/eval mode, state dicts."""
from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    def __init__(self):
        self.training = True

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, value in getattr(self, "_buffers", {}).items():
            yield prefix + key, value
        for key, child in self._children():
            yield from child.named_buffers(prefix + key + ".")

    def state_dict(self):
        """Parameters and buffers keyed by dotted path, as float64 arrays (copies)."""
        out = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data.copy()
        for name, b in self.named_buffers():
            out[name] = b.copy()
        return out

    def load_state_dict(self, state):
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        unknown = set(state) - set(targets)
        if missing or unknown:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(unknown)}")
        for name, arr in targets.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k=3, padding=None, dilation=1, stride=1, bias=True, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.k, self.stride, self.dilation = k, stride, dilation
        self.padding = dilation * (k - 1) // 2 if padding is None else padding
        self.weight = Parameter(_he_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class Linear(Module):
    def __init__(self, fin, fout, bias=True, rng=None, zero=False):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / np.sqrt(fin)
        w = np.zeros((fout, fin)) if zero else rng.uniform(-bound, bound, size=(fout, fin))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(fout)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(c))
        self.bias = Parameter(np.zeros(c))
        self._buffers = OrderedDict(running_mean=np.zeros(c), running_var=np.ones(c))

    def forward(self, x):
        return ops.batch_norm(x, self.weight, self.bias, self._buffers["running_mean"],
                              self._buffers["running_var"], self.training, self.momentum, self.eps)
