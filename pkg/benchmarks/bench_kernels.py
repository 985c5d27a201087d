"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Shapes follow one training batch: 24 slices of length 100 (or 200) with
8 heads. Results are checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from qakt import _kernels_py as py

try:
    from qakt import _kernels_ext as ext
except ImportError:
    ext = None


def cases(rng, length):
    scores = rng.normal(size=(24, 8, length, length))
    theta = rng.uniform(0.05, 0.5, 8)
    w, dist = py.monotonic_weights(scores, theta, True)
    grad = rng.normal(size=scores.shape)
    agree = rng.integers(0, 50, (8, 8))
    out = np.zeros((51, 64))
    index = rng.integers(0, 51, 24 * length)
    src = rng.normal(size=(24 * length, 64))
    return {
        "context_distance": lambda m: m.context_distance(scores[0, 0], True),
        "monotonic_weights": lambda m: m.monotonic_weights(scores, theta, True),
        "monotonic_weights_backward": lambda m: m.monotonic_weights_backward(grad, w, scores, dist, theta, True),
        "scatter_add_rows": lambda m: m.scatter_add_rows(out.copy(), index, src),
        "best_assignment(8x8)": lambda m: m.best_assignment(agree),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--length", type=int, default=100)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    if ext is None:
        print("compiled extension not built; only the numpy fallback is timed")
    print(f"{'kernel':<28}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(rng, args.length).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if ext is None:
            print(f"{name:<28}{t_py:>10.2f}{'-':>11}{'-':>9}")
            continue
        if not same(fn(py), fn(ext)):
            raise SystemExit(f"{name}: backends disagree")
        t_ext = min(timeit.repeat(lambda: fn(ext), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_py:>10.2f}{t_ext:>11.2f}{t_py / t_ext:>8.1f}x")


if __name__ == "__main__":
    main()
