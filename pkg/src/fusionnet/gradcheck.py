"""Central finite-difference gradient checks for every differentiable op and layer."""
from dataclasses import dataclass

import numpy as np

from . import ops
from .backbones import Backbone, BackboneSpec
from .fusion import ChannelAttention, FusionNet, FusionSpec
from .gabor import gabor_conv_forward, gabor_kernels, init_bank
from .layers import dilated_block, mix_pool
from .nn import BatchNorm2d
from .tensor import Tensor

STEP = 1e-5
PRIMITIVE_TOL = 1e-6
LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


def rel_error(analytic, numeric, floor=1e-8):
    """Per-coordinate ``|a - n| / max(|a|, |n|)``; both below ``floor`` counts as exact."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    den = np.maximum(np.abs(a), np.abs(n))
    return np.where(den < floor, 0.0, np.abs(a - n) / np.maximum(den, floor))


def numeric_grad(fn, tensors, idx_lists, h=STEP):
    out = []
    for t, idx in zip(tensors, idx_lists):
        g = np.zeros(len(idx))
        flat = t.data.reshape(-1)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            g[j] = (fp - fm) / (2 * h)
        out.append(g)
    return out


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float
    n_coords: int

    @property
    def passed(self):
        return bool(self.max_rel_err < self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<32} max rel err {self.max_rel_err:.2e} (tol {self.tol:.0e}, {self.n_coords} coords)"


def check(name, fn, tensors, tol, h=STEP, max_coords=None, seed=0):
    """Compare backward() of the scalar ``fn()`` against central differences.

    ``max_coords`` caps the coordinates probed per tensor (sampled without
    replacement) to bound runtime on larger parameter sets.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]
    idx_lists = []
    for t in tensors:
        n = t.size
        idx_lists.append(np.arange(n) if max_coords is None or n <= max_coords
                         else np.sort(rng.choice(n, max_coords, replace=False)))
    numeric = numeric_grad(fn, tensors, idx_lists, h)
    worst, count = 0.0, 0
    for a, n, idx in zip(analytic, numeric, idx_lists):
        err = rel_error(a.reshape(-1)[idx], n)
        worst = max(worst, float(err.max()) if err.size else 0.0)
        count += len(idx)
    return CheckResult(name, worst, tol, count)


def _projected(out_fn, shape, rng):
    proj = Tensor(rng.standard_normal(shape))
    return lambda: (out_fn() * proj).sum()


def _rand(rng, *shape, grad=True, spread=1.0):
    return Tensor(rng.standard_normal(shape) * spread, requires_grad=grad)


def _distinct(rng, *shape):
    """Values with well-separated entries so max/relu kinks are never probed."""
    n = int(np.prod(shape))
    vals = rng.permutation(n).astype(float) * 0.1 + 0.05 - 0.05 * n
    return Tensor(vals.reshape(shape) + rng.uniform(-0.01, 0.01, n).reshape(shape), requires_grad=True)


def primitive_checks(seed=0):
    rng = np.random.default_rng(seed)
    res = []
    x = _rand(rng, 2, 3, 6, 6)
    for d in (1, 3, 6, 9):
        w = _rand(rng, 2, 3, 3, 3)
        b = _rand(rng, 2)
        pad = d
        shape = ops.conv2d(x, w, b, 1, pad, d).shape
        res.append(check(f"conv2d (dilation {d})", _projected(lambda w=w, b=b, d=d: ops.conv2d(x, w, b, 1, d, d), shape, rng),
                         [x, w, b], PRIMITIVE_TOL))
    w = _rand(rng, 4, 3, 3, 3)
    res.append(check("conv2d (stride 2, pad 1)", _projected(lambda: ops.conv2d(x, w, None, 2, 1, 1), (2, 4, 3, 3), rng),
                     [x, w], PRIMITIVE_TOL))
    xd = _distinct(rng, 2, 2, 6, 6)
    res.append(check("pool2d max", _projected(lambda: ops.pool2d(xd, "max", 2, 2), (2, 2, 3, 3), rng), [xd], PRIMITIVE_TOL))
    res.append(check("pool2d avg", _projected(lambda: ops.pool2d(xd, "avg", 2, 2), (2, 2, 3, 3), rng), [xd], PRIMITIVE_TOL))
    res.append(check("relu", _projected(lambda: ops.relu(xd), xd.shape, rng), [xd], PRIMITIVE_TOL))
    s = _rand(rng, 3, 4)
    res.append(check("sigmoid", _projected(lambda: ops.sigmoid(s), s.shape, rng), [s], PRIMITIVE_TOL))
    bn = BatchNorm2d(3)
    bn.weight.data[:] = rng.uniform(0.5, 1.5, 3)
    bn.bias.data[:] = rng.standard_normal(3)
    xb = _rand(rng, 2, 3, 4, 4)
    res.append(check("batch_norm (train)", _projected(lambda: bn(xb), xb.shape, rng),
                     [xb, bn.weight, bn.bias], PRIMITIVE_TOL))
    bn.eval()
    res.append(check("batch_norm (eval)", _projected(lambda: bn(xb), xb.shape, rng),
                     [xb, bn.weight, bn.bias], PRIMITIVE_TOL))
    xl, wl, bl = _rand(rng, 4, 5), _rand(rng, 3, 5), _rand(rng, 3)
    res.append(check("linear", _projected(lambda: ops.linear(xl, wl, bl), (4, 3), rng), [xl, wl, bl], PRIMITIVE_TOL))
    a, b2 = _rand(rng, 2, 2, 3, 3), _rand(rng, 2, 3, 3, 3)
    res.append(check("concat", _projected(lambda: ops.concat([a, b2], 1), (2, 5, 3, 3), rng), [a, b2], PRIMITIVE_TOL))
    m1, m2 = _rand(rng, 2, 3, 4, 4), _rand(rng, 2, 3, 1, 1)
    res.append(check("add/mul (broadcast)", _projected(lambda: m1 * m2 + m1, m1.shape, rng), [m1, m2], PRIMITIVE_TOL))
    res.append(check("global_avg_pool", _projected(lambda: ops.global_avg_pool(xd), (2, 2), rng), [xd], PRIMITIVE_TOL))
    res.append(check("adaptive max pool 1x1", _projected(lambda: ops.adaptive_pool(xd, "max"), (2, 2, 1, 1), rng),
                     [xd], PRIMITIVE_TOL))
    z = _rand(rng, 8, 2)
    y = rng.integers(0, 2, 8)
    res.append(check("weighted_cross_entropy", lambda: ops.weighted_cross_entropy(z, y, [3.0, 1.0]), [z], PRIMITIVE_TOL))
    return res


def gabor_checks(seed=0):
    rng = np.random.default_rng(seed)
    n = 6
    om = Tensor(rng.uniform(0.3, 1.6, n), requires_grad=True)
    th = Tensor(rng.uniform(0, np.pi, n), requires_grad=True)
    ps = Tensor(rng.uniform(0, np.pi, n), requires_grad=True)
    sg = Tensor(rng.uniform(1.0, 4.0, n), requires_grad=True)
    res = [check("gabor kernels (k=7)", _projected(lambda: gabor_kernels(om, th, ps, sg, 7), (n, 7, 7), rng),
                 [om, th, ps, sg], LAYER_TOL)]
    bank = init_bank(2, 4, 7, seed=seed)
    x = Tensor(rng.standard_normal((2, 3, 9, 9)))
    params = [bank.omega, bank.theta, bank.psi, bank.sigma]
    res.append(check("gabor conv (sum of outputs)", lambda: gabor_conv_forward(x, bank).sum(), params, LAYER_TOL))
    res.append(check("gabor conv (projected)", _projected(lambda: gabor_conv_forward(x, bank), (2, 8, 9, 9), rng),
                     params, LAYER_TOL))
    return res


def mixpool_checks(seed=0):
    rng = np.random.default_rng(seed)
    x = _distinct(rng, 2, 3, 6, 6)
    return [check(f"mix_pool (alpha {a})", _projected(lambda a=a: mix_pool(x, a, 2, 2), (2, 3, 3, 3), rng), [x], LAYER_TOL)
            for a in (0.2, 0.5, 0.8)]


def dilated_checks(seed=0):
    rng = np.random.default_rng(seed)
    x = _rand(rng, 2, 3, 5, 5)
    ws = [_rand(rng, 4, 3, 3, 3, spread=0.5) for _ in range(4)]
    bs = [Tensor(rng.uniform(0.5, 1.0, 4), requires_grad=True) for _ in range(4)]
    fn = _projected(lambda: dilated_block(x, ws, bs, (1, 3, 6, 9)), (2, 4, 5, 5), rng)
    return [check("dilated block (rates 1,3,6,9)", fn, [x] + ws + bs, LAYER_TOL)]


def attention_checks(seed=0):
    rng = np.random.default_rng(seed)
    att = ChannelAttention(8, 4, rng=rng)
    for p in att.parameters():
        p.data += rng.uniform(-0.05, 0.05, p.shape)
    f = _distinct(rng, 2, 8, 3, 3)
    fn = _projected(lambda: att(f), f.shape, rng)
    return [check("channel attention", fn, [f] + att.parameters(), PRIMITIVE_TOL)]


def _tiny_spec(kind):
    return BackboneSpec(kind=kind, channels=(4, 4, 4, 4, 4), pool_layers=(True, True, False, False, False),
                        gabor={"n_freq": 2, "n_orient": 2, "kernel_size": 5}, seed=3)


def model_checks(seed=0, max_coords=12):
    rng = np.random.default_rng(seed)
    res = []
    net = Backbone(_tiny_spec("DGCNN"))
    x = Tensor(rng.standard_normal((4, 3, 16, 16)))
    y = np.array([0, 1, 1, 0])
    res.append(check("tiny DGCNN end-to-end", lambda: ops.weighted_cross_entropy(net(x)[1], y, [3.0, 1.0]),
                     net.parameters(), MODEL_TOL, max_coords=max_coords, seed=seed))
    spec = FusionSpec(branch=BackboneSpec(kind="DGCNN", channels=(4, 4, 4, 4, 8),
                                          pool_layers=(True, True, False, False, False),
                                          gabor={"n_freq": 2, "n_orient": 2, "kernel_size": 5}),
                      head_widths=(8, 8, 8, 4, 2), reduction=4, seed=5)
    fnet = FusionNet(spec)
    xs = [Tensor(rng.standard_normal((4, 3, 16, 16))) for _ in range(5)]
    res.append(check("tiny FusionNet end-to-end", lambda: ops.weighted_cross_entropy(fnet(xs), y, [3.0, 1.0]),
                     fnet.parameters(), MODEL_TOL, max_coords=4, seed=seed))
    return res


SUITES = {
    "primitives": primitive_checks,
    "gabor": gabor_checks,
    "mixpool": mixpool_checks,
    "dilated": dilated_checks,
    "attention": attention_checks,
    "models": model_checks,
}


def run(modules=("all",), seed=0):
    names = list(SUITES) if "all" in modules else list(modules)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown gradcheck modules {sorted(unknown)}; choose from {sorted(SUITES)} or 'all'")
    results = []
    for name in names:
        results.extend(SUITES[name](seed))
    return results
