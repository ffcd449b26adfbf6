"""Timing comparison of the compiled kernels against the numpy reference.

Run as: python3 benchmarks/bench_kernels.py [--repeats N] [--rows R] [--cols C]
"""

import argparse
import time

import numpy as np

from morphome.kernels import reference

try:
    from morphome.kernels import _core
except ImportError:
    _core = None


def bench(fn, args, repeats):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--rows", type=int, default=12000,
                    help="matrix rows, roughly batch x sequence length")
    ap.add_argument("--cols", type=int, default=256, help="model width")
    args = ap.parse_args()

    if _core is None:
        raise SystemExit("compiled backend unavailable; build with pip install -e .")

    rng = np.random.default_rng(0)
    shape = (args.rows, args.cols)
    cases = []
    for dtype in (np.float32, np.float64):
        x = rng.standard_normal(shape).astype(dtype)
        dy = rng.standard_normal(shape).astype(dtype)
        y = reference.softmax_forward(x)
        gamma = rng.standard_normal(args.cols).astype(dtype)
        beta = rng.standard_normal(args.cols).astype(dtype)
        ln_y, mean, rstd = reference.layernorm_forward(x, gamma, beta)
        name = np.dtype(dtype).name
        cases += [
            (f"softmax_forward/{name}", "softmax_forward", (x,)),
            (f"softmax_backward/{name}", "softmax_backward", (y, dy)),
            (f"layernorm_forward/{name}", "layernorm_forward", (x, gamma, beta)),
            (f"layernorm_backward/{name}", "layernorm_backward",
             (x, gamma, mean, rstd, dy)),
            (f"relu_forward/{name}", "relu_forward", (x,)),
            (f"relu_backward/{name}", "relu_backward", (x, dy)),
        ]
        grad = rng.standard_normal(shape).astype(dtype)
        cases.append(
            (f"adam_update/{name}", "adam_update",
             (x.copy(), grad, np.zeros(shape, dtype), np.zeros(shape, dtype),
              1e-3, 0.9, 0.98, 1e-9, 1))
        )

    print(f"shape {shape}, best of {args.repeats}")
    print(f"{'kernel':<28} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for label, fname, fargs in cases:
        t_ref = bench(getattr(reference, fname), fargs, args.repeats)
        t_core = bench(getattr(_core, fname), fargs, args.repeats)
        print(f"{label:<28} {t_ref * 1e3:>8.2f}ms {t_core * 1e3:>8.2f}ms "
              f"{t_ref / t_core:>7.2f}x")


if __name__ == "__main__":
    main()
