import numpy as np

from .tensor import ShapeError


class AdamState:
    """Moment buffers and step counter for :func:`adam_step`."""

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` and ``grads`` are sequences of numpy arrays; a ``None`` gradient
    is treated as zero.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("adam_step: params, grads and state have different lengths")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: param {p.shape}, grad {g.shape}, state {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Optimizer wrapper binding :func:`adam_step` to a list of parameter tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState([p.shape for p in self.params], lr, betas[0], betas[1], eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
