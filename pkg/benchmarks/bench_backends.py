"""Time the conv kernels on every available backend.

Usage: python benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from bsnn import kernels
from bsnn.kernels import numpy_impl

CASES = [
    # (label, n, c, h, w, oc, k, stride)
    ("stem 8x28x28", 16, 1, 28, 28, 8, 3, 1),
    ("mid 16x14x14", 16, 16, 14, 14, 16, 3, 1),
    ("wide 32x8x8", 32, 32, 8, 8, 32, 3, 1),
]


def impl_for(name):
    if name == "numpy":
        return numpy_impl
    from bsnn.kernels import numba_impl

    return numba_impl


def bench(fn, repeats):
    fn()  # warm up (jit compile, cache priming)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)} (best of {args.repeats})")
    header = f"{'case':<16}{'op':<10}" + "".join(f"{b:>12}" for b in backends)
    print(header)
    print("-" * len(header))
    for label, n, c, h, w, oc, k, stride in CASES:
        x = rng.standard_normal((n, c, h + 2, w + 2))  # pre-padded by 1
        wt = rng.standard_normal((oc, c, k, k))
        y = numpy_impl.conv2d_forward(x, wt, stride)
        gy = rng.standard_normal(y.shape)
        ops = {
            "forward": lambda m: m.conv2d_forward(x, wt, stride),
            "grad_w": lambda m: m.conv2d_grad_weights(gy, x, k, k, stride),
            "grad_x": lambda m: m.conv2d_grad_input(gy, wt, stride, x.shape[2], x.shape[3]),
        }
        for op_name, op in ops.items():
            times = []
            for b in backends:
                m = impl_for(b)
                times.append(bench(lambda: op(m), args.repeats))
            cells = "".join(f"{t * 1e3:>10.2f}ms" for t in times)
            print(f"{label:<16}{op_name:<10}{cells}")
    ref = impl_for(backends[0])
    for b in backends[1:]:
        m = impl_for(b)
        x = rng.standard_normal((2, 3, 9, 9))
        wt = rng.standard_normal((4, 3, 3, 3))
        same = np.allclose(
            ref.conv2d_forward(x, wt, 1), m.conv2d_forward(x, wt, 1),
            rtol=1e-12, atol=1e-12,
        )
        print(f"agreement {backends[0]} vs {b}: {'ok' if same else 'MISMATCH'}")


if __name__ == "__main__":
    main()
