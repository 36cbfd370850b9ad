"""Time the compiled kernels against the pure-Python fallback on typical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Both backends must give identical outputs; the script stops if they differ.
"""

import argparse
import time

import numpy as np

from qdqkd import kernels
from qdqkd.kernels import _pykernels
from qdqkd.postproc.gf import GF2_MODULI

try:
    from qdqkd.kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(rng, scale):
    n = int(200_000 * scale)
    span = int(n * 1e4)  # ~100 Mcps-scale density, picoseconds
    ta = np.sort(rng.integers(0, span, n))
    tb = np.sort(np.concatenate([ta[: n // 2] - 1_000_000 + rng.integers(-400, 400, n // 2),
                                 rng.integers(0, span, n - n // 2)]))
    ch = rng.integers(0, 2, n).astype(np.uint8)
    words = rng.integers(0, 1 << 16, 512).astype(np.uint64)  # 8192-bit block, l = 16
    k = int(2000 * scale)
    alphas = rng.integers(0, 1 << 16, k).astype(np.uint64)
    betas = rng.integers(0, 1 << 16, k).astype(np.uint64)
    poly = GF2_MODULI[16]
    return {
        "deadtime_mask": lambda impl: kernels.deadtime_mask(ta, 25_000, impl),
        "diff_histogram": lambda impl: kernels.diff_histogram(ta, tb, 1_000_000 - 3000, 50, 120, impl),
        "match_sweep": lambda impl: kernels.match_sweep(ta, tb, 1_000_000, 400, impl),
        "signed_autocorr": lambda impl: kernels.signed_autocorr(ta, ch, 32_000, 25, impl),
        "rsh_bits": lambda impl: kernels.rsh_bits(words, alphas, betas, 16, poly, impl),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="input size multiplier")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels unavailable; build with: python3 setup.py build_ext --inplace")
    print(f"{'kernel':<16} {'python s':>10} {'cython s':>10} {'speed-up':>9}")
    for name, fn in cases(np.random.default_rng(args.seed), args.scale).items():
        t_py, out_py = best_of(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<16} {t_py:>10.4f} {'-':>10} {'-':>9}")
            continue
        t_c, out_c = best_of(lambda: fn(_ckernels), args.repeat)
        if not same(out_py, out_c):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<16} {t_py:>10.4f} {t_c:>10.4f} {t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
