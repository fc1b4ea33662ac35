"""Benchmark the numba and pure-numpy kernel backends side by side.

Times convolution and pooling forward/backward on training-representative
shapes. Run:

    python benchmarks/bench_kernels.py [--repeats 20]

The active backend for the package itself is chosen by MELVIT_BACKEND; this
script imports both kernel modules directly and also cross-checks agreement.
"""

import argparse
import time

import numpy as np

from melvit import _kernels_numpy

try:
    from melvit import _kernels_numba

    HAVE_NUMBA = True
except ImportError:
    _kernels_numba = None
    HAVE_NUMBA = False

# (batch, channels->filters, height, width) per CNN stage on a 64x32 input
SHAPES = [
    (16, 1, 32, 64, 32),
    (16, 32, 64, 32, 16),
    (16, 64, 128, 16, 8),
    (16, 128, 64, 8, 4),
]


def time_call(fn, repeats):
    fn()  # warmup (and numba compilation)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_backend(kernels, repeats):
    rng = np.random.default_rng(0)
    totals = {"conv_fwd": 0.0, "conv_bwd": 0.0, "pool_fwd": 0.0, "pool_bwd": 0.0}
    for b, c, f, h, w in SHAPES:
        xp = rng.normal(size=(b, c, h + 2, w + 2)).astype(np.float32)
        k = rng.normal(size=(f, c, 3, 3)).astype(np.float32)
        g = rng.normal(size=(b, f, h, w)).astype(np.float32)
        totals["conv_fwd"] += time_call(lambda: kernels.conv2d_forward(xp, k), repeats)
        totals["conv_bwd"] += time_call(
            lambda: (
                kernels.conv2d_backward_w(xp, g),
                kernels.conv2d_backward_x(g, k, h + 2, w + 2),
            ),
            repeats,
        )
        x = rng.normal(size=(b, f, h, w)).astype(np.float32)
        out, arg = kernels.maxpool2d_forward(x, 2)
        gp = rng.normal(size=out.shape).astype(np.float32)
        totals["pool_fwd"] += time_call(lambda: kernels.maxpool2d_forward(x, 2), repeats)
        totals["pool_bwd"] += time_call(
            lambda: kernels.maxpool2d_backward(gp, arg, h, w), repeats
        )
    return totals


def cross_check():
    if not HAVE_NUMBA:
        return "numba unavailable, skipped"
    rng = np.random.default_rng(1)
    xp = rng.normal(size=(2, 3, 10, 9)).astype(np.float64)
    k = rng.normal(size=(4, 3, 3, 3)).astype(np.float64)
    g = rng.normal(size=(2, 4, 8, 7)).astype(np.float64)
    checks = [
        np.allclose(
            _kernels_numba.conv2d_forward(xp, k), _kernels_numpy.conv2d_forward(xp, k)
        ),
        np.allclose(
            _kernels_numba.conv2d_backward_w(xp, g), _kernels_numpy.conv2d_backward_w(xp, g)
        ),
        np.allclose(
            _kernels_numba.conv2d_backward_x(g, k, 10, 9),
            _kernels_numpy.conv2d_backward_x(g, k, 10, 9),
        ),
    ]
    return "agree" if all(checks) else "DISAGREE"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    results = {"numpy": bench_backend(_kernels_numpy, args.repeats)}
    if HAVE_NUMBA:
        results["numba"] = bench_backend(_kernels_numba, args.repeats)

    ops = list(next(iter(results.values())))
    header = f"{'op':10s}" + "".join(f"{name:>12s}" for name in results)
    if len(results) == 2:
        header += f"{'speedup':>10s}"
    print(f"per-op mean over the 4 CNN stages, batch 16 ({args.repeats} repeats)")
    print(header)
    for op in ops:
        row = f"{op:10s}" + "".join(f"{results[name][op] * 1e3:10.2f}ms" for name in results)
        if len(results) == 2:
            row += f"{results['numpy'][op] / results['numba'][op]:9.2f}x"
        print(row)
    total_np = sum(results["numpy"].values())
    line = f"{'total':10s}{total_np * 1e3:10.2f}ms"
    if HAVE_NUMBA:
        total_nb = sum(results["numba"].values())
        line += f"{total_nb * 1e3:10.2f}ms{total_np / total_nb:9.2f}x"
    print(line)
    print(f"cross-check: {cross_check()}")


if __name__ == "__main__":
    main()
