"""Compare the compiled kernels against the pure-numpy reference.

Run from the repository root after an editable install:

    python3 benchmarks/bench_kernels.py [--repeats 30]

Each kernel is timed on shapes matching a realistic training step
(batch 8, length 32, width 64).  The report prints the best wall time
per backend and the speedup, plus the max elementwise deviation as a
cross-check that both paths compute the same thing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from prognote import kernels


def _best(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def build_cases(rng):
    b, heads, length, width = 8, 2, 32, 64
    x = rng.standard_normal((b * length, width))
    g = np.ones(width)
    bias = np.zeros(width)
    scores = rng.standard_normal((b, heads, length, length))
    mask = np.ones((b, length))
    mask[:, 24:] = 0.0
    dout = rng.standard_normal((b * length, width))
    param = rng.standard_normal((width, width))
    grad = rng.standard_normal((width, width))
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    return {
        "layer_norm_fwd": (x, g, bias, 1e-12),
        "masked_softmax_fwd": (scores, mask),
        "gelu_fwd": (x,),
        "gelu_bwd": (x, dout),
        "adam_update": (param.copy(), grad, m.copy(), v.copy(),
                        1, 1e-3, 0.9, 0.999, 1e-8),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    available = kernels.available_backends()
    if "cython" not in available:
        print("compiled backend unavailable; nothing to compare")
        return 0

    rng = np.random.Generator(np.random.PCG64(0))
    cases = build_cases(rng)
    initial_backend = kernels.BACKEND

    print(f"{'kernel':<22} {'python':>12} {'cython':>12} {'speedup':>9} {'max |diff|':>12}")
    for name, arg_tuple in cases.items():
        results = {}
        times = {}
        for backend in ("python", "cython"):
            kernels.use_backend(backend)
            fn = getattr(kernels, name)
            fresh = lambda: [np.copy(a) if isinstance(a, np.ndarray) else a
                             for a in arg_tuple]
            times[backend] = _best(fn, fresh(), args.repeats)
            call_args = fresh()
            out = fn(*call_args)
            if out is None:  # in-place kernel: compare the mutated arrays
                out = tuple(a for a in call_args if isinstance(a, np.ndarray))
            results[backend] = out
        t_py, t_cy = times["python"], times["cython"]
        out_py, out_cy = results["python"], results["cython"]

        if isinstance(out_py, tuple):
            diff = max(float(np.abs(np.asarray(p) - np.asarray(c)).max())
                       for p, c in zip(out_py, out_cy))
        else:
            diff = float(np.abs(out_py - out_cy).max())
        print(f"{name:<22} {t_py*1e6:>10.1f}us {t_cy*1e6:>10.1f}us "
              f"{t_py/t_cy:>8.2f}x {diff:>12.2e}")

    kernels.use_backend(initial_backend)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
