"""Time the numba and numpy kernel flavours side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 128] [--batch 64]

Shapes follow the first two conv/pool stages of the network at the given
input size and batch. Also times one full training step with each flavour
by swapping ``kernels.ACTIVE``.
"""
import argparse
import time

import numpy as np

from btcnn import kernels
from btcnn.model import build_architecture, init_params, loss_and_grads


def best_of(fn, repeat):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, batch, rng):
    out = []
    for c, n in ((1, size), (8, size // 2)):
        x = rng.normal(size=(c, batch, n, n))
        cols = kernels.NUMPY.im2col(x, 3, 1, 1, n, n)
        z = rng.normal(size=(8 if c == 1 else 16, batch, n, n))
        pooled, idx = kernels.NUMPY.relu_pool_fwd(z)
        g = rng.normal(size=pooled.shape)
        tag = f"C={c} {n}x{n}"
        out += [
            (f"im2col        {tag}", lambda k, x=x, n=n: k.im2col(x, 3, 1, 1, n, n)),
            (f"col2im        {tag}", lambda k, d=cols, c=c, n=n: k.col2im(d, c, batch, n, n, 3, 1, 1, n, n)),
            (f"relu_pool_fwd {tag}", lambda k, z=z: k.relu_pool_fwd(z)),
            (f"relu_pool_bwd {tag}", lambda k, i=idx, p=pooled, g=g: k.relu_pool_bwd(i, p, g)),
        ]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()
    if kernels.NUMBA is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.size, args.batch, rng):
        t_np = best_of(lambda: fn(kernels.NUMPY), args.repeat)
        t_nb = best_of(lambda: fn(kernels.NUMBA), args.repeat)
        print(f"{name:32s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.2f}")

    params = init_params(build_architecture(args.size), 0)
    x = rng.uniform(size=(args.batch, 1, args.size, args.size))
    y = rng.integers(0, 3, size=args.batch)
    step = {}
    saved = kernels.ACTIVE
    try:
        for ns in (kernels.NUMPY, kernels.NUMBA):
            kernels.ACTIVE = ns
            step[ns.name] = best_of(lambda: loss_and_grads(params, x, y), args.repeat)
    finally:
        kernels.ACTIVE = saved
    print(
        f"{'train step (fwd+bwd)':32s} {1e3 * step['numpy']:10.2f} {1e3 * step['numba']:10.2f} "
        f"{step['numpy'] / step['numba']:8.2f}"
    )


if __name__ == "__main__":
    main()
