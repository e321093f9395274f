"""Time the compiled kernels against the numpy fallback on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Also checks that both backends return the same values on every input timed.
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from gvground import _fallback

try:
    from gvground import _ckernels
except ImportError:
    _ckernels = None


def _deform_inputs(rng, n_q=10, n_heads=4, n_levels=3, n_points=4, d=4):
    shapes = np.array([(8 >> l, 8 >> l) for l in range(n_levels)], dtype=np.int64)
    sizes = shapes[:, 0] * shapes[:, 1]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    value = rng.normal(size=(int(sizes.sum()), n_heads, d))
    loc = rng.uniform(-1, 8, size=(n_q, n_heads, n_levels, n_points, 2))
    attn = rng.random((n_q, n_heads, n_levels, n_points))
    return value, shapes, starts, loc, attn


def cases(rng):
    grid = rng.normal(size=(8, 8, 16))
    yield "sample_bilinear 8x8x16", "sample_bilinear", (grid, 3.3, 4.7)
    yield "deform_gather Q=10 M=4 L=3 K=4", "deform_gather", _deform_inputs(rng)
    yield "greedy_select 8x8 N=10", "greedy_select", (rng.random((8, 8)), 10, 0.003)
    yield "greedy_select 32x32 N=10", "greedy_select", (rng.random((32, 32)), 10, 0.003)
    yield "assignment 10x3", "linear_sum_assignment", (rng.random((10, 3)),)
    yield "assignment 7x7 integer ties", "linear_sum_assignment", (
        rng.integers(0, 4, size=(7, 7)).astype(float),)


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=0, atol=1e-12))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s} {'python us':>11s} {'cython us':>11s} {'speedup':>8s}  agree")
    ok = True
    for label, name, inputs in cases(rng):
        times = {}
        for backend in (_fallback, _ckernels):
            fn = getattr(backend, name)
            timer = timeit.Timer(lambda: fn(*inputs))
            number, _ = timer.autorange()
            times[backend] = min(timer.repeat(args.repeat, number)) / number * 1e6
        agree = _same(getattr(_fallback, name)(*inputs), getattr(_ckernels, name)(*inputs))
        ok &= agree
        print(f"{label:34s} {times[_fallback]:11.1f} {times[_ckernels]:11.1f} "
              f"{times[_fallback] / times[_ckernels]:7.1f}x  {'yes' if agree else 'NO'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
