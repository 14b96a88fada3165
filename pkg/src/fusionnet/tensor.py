"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a float64 numpy array. Operations on tensors that
require gradients record their parents and a backward rule; calling
:meth:`Tensor.backward` on a scalar walks that record in reverse
topological order, visiting each node once.
"""
import contextlib

import numpy as np

DTYPE = np.float64

_state = {"grad_enabled": True, "anomaly": False}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class AnomalyError(FloatingPointError):
    """Raised in anomaly mode when an op first produces a non-finite value."""

    def __init__(self, op, source=None):
        where = f" from non-finite input '{source}'" if source else ""
        super().__init__(f"non-finite values first produced by op '{op}'{where}")
        self.op = op
        self.source = source


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


@contextlib.contextmanager
def detect_anomaly():
    """Make every op check its output and raise :class:`AnomalyError` on NaN/Inf."""
    prev = _state["anomaly"]
    _state["anomaly"] = True
    try:
        yield
    finally:
        _state["anomaly"] = prev


def grad_enabled():
    return _state["grad_enabled"]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE, copy=True)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _result(cls, data, parents, backward, op):
        """Wrap a freshly computed array as the output of ``op``."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        if _state["anomaly"] and not np.all(np.isfinite(data)):
            bad = [p for p in parents if not np.all(np.isfinite(p.data))]
            if not bad:
                raise AnomalyError(op)
            leaf = next((p for p in bad if p.op == "leaf"), None)
            if leaf is not None:
                # A parameter or input was already corrupt when it entered the graph.
                raise AnomalyError(op, leaf.name or "leaf tensor")
        needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # ------------------------------------------------------------------
    def tape(self):
        """Nodes reachable from ``self`` in topological order (inputs first)."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss is not connected to any tensor that requires grad")
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(self.tape()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ------------------------------------------------------------------
    # elementwise arithmetic (numpy broadcasting, reduced on the way back)
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._result(
            self.data + other.data, (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._result(
            self.data - other.data, (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._result(
            x * y, (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._result(
            x / y, (self, other),
            lambda g: (_unbroadcast(g / y, x.shape),
                       _unbroadcast(-g * x / (y * y), y.shape)), "div")

    def __pow__(self, p):
        x = self.data
        p = float(p)
        return Tensor._result(x ** p, (self,), lambda g: (g * p * x ** (p - 1),), "pow")

    def __getitem__(self, idx):
        shape = self.shape

        def back(g):
            out = np.zeros(shape, dtype=g.dtype)
            np.add.at(out, idx, g)
            return (out,)
        return Tensor._result(np.array(self.data[idx]), (self,), back, "getitem")

    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return Tensor._result(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)),
                              (self,), back, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._result(self.data.reshape(shape).copy(), (self,),
                              lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor._result(self.data.transpose(axes).copy(), (self,),
                              lambda g: (g.transpose(inv),), "transpose")

    def exp(self):
        y = np.exp(self.data)
        return Tensor._result(y, (self,), lambda g: (g * y,), "exp")

    def log(self):
        x = self.data
        return Tensor._result(np.log(x), (self,), lambda g: (g / x,), "log")

    def cos(self):
        x = self.data
        return Tensor._result(np.cos(x), (self,), lambda g: (-g * np.sin(x),), "cos")

    def sin(self):
        x = self.data
        return Tensor._result(np.sin(x), (self,), lambda g: (g * np.cos(x),), "sin")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)
