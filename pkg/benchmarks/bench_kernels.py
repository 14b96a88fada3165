"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Times each hot kernel on desk-scale shapes, then one forward/backward of a
desk-scale DGCNN on a batch of 32, under both backends.
"""
import argparse
import json
import time

import numpy as np

from fusionnet import kernels, ops
from fusionnet.models import DESK_BRANCH, backbone_model_spec, build_model
from fusionnet.tensor import Tensor


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    b, c, h = 32, 16, 32
    xp = rng.standard_normal((b, c, h + 2, h + 2))
    cols = kernels.im2col(xp, 3, 1, 1, h, h)
    xd = rng.standard_normal((b, c, h + 12, h + 12))
    x = rng.standard_normal((b, c, h, h))
    _, arg = kernels.maxpool_forward(x, 2, 2)
    g = rng.standard_normal((b, c, h // 2, h // 2))
    model = build_model(backbone_model_spec("DGCNN", **DESK_BRANCH))
    xin = Tensor(rng.standard_normal((b, 3, h, h)))
    y = rng.integers(0, 2, b)

    def step():
        model.zero_grad()
        ops.weighted_cross_entropy(model(xin)[1], y, [3.0, 1.0]).backward()

    return {
        "im2col 3x3": lambda: kernels.im2col(xp, 3, 1, 1, h, h),
        "im2col 3x3 dilation 6": lambda: kernels.im2col(xd, 3, 1, 6, h, h),
        "col2im 3x3": lambda: kernels.col2im(cols, b, c, h + 2, h + 2, 3, 1, 1, h, h),
        "maxpool forward": lambda: kernels.maxpool_forward(x, 2, 2),
        "maxpool backward": lambda: kernels.maxpool_backward(g, arg, x.shape, 2, 2),
        "avgpool forward": lambda: kernels.avgpool_forward(x, 2, 2),
        "avgpool backward": lambda: kernels.avgpool_backward(g, x.shape, 2, 2),
        "DGCNN train step (batch 32)": step,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json")
    args = p.parse_args(argv)
    start = kernels.BACKEND
    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    results = {}
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        for name, fn in cases().items():
            fn()
            results.setdefault(name, {})[backend] = best_of(fn, args.repeat)
    kernels.use_backend(start)
    print(f"{'case':<30} {'numpy ms':>10} {'cython ms':>10} {'speed-up':>9}")
    for name, r in results.items():
        print(f"{name:<30} {1e3 * r['python']:>10.2f} {1e3 * r['cython']:>10.2f} {r['python'] / r['cython']:>8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
