"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py
"""
import time

import numpy as np

from advscen import _kernels


def _random_pairs(rng, n_pairs, steps):
    out = []
    for _ in range(n_pairs):
        ex = np.cumsum(rng.normal(1.0, 0.3, steps))
        ey = rng.normal(0.0, 0.5, steps)
        bx = np.cumsum(rng.normal(0.9, 0.3, steps)) + rng.uniform(-20, 20)
        by = rng.normal(3.5, 0.5, steps)
        vel = lambda: rng.normal(10.0, 2.0, steps)
        out.append((ex, ey, vel(), vel(), bx, by, vel(), vel()))
    return out


def _bench(label, fn, calls):
    t0 = time.perf_counter()
    for args in calls:
        fn(*args)
    elapsed = time.perf_counter() - t0
    print(f"{label:32s} {elapsed * 1e3:9.1f} ms  ({len(calls)} calls)")
    return elapsed


def main():
    rng = np.random.default_rng(7)
    pairs = _random_pairs(rng, 2000, 80)
    eps_calls = [(ex, ey, bx, by, 2.0) for ex, ey, _, _, bx, by, _, _ in pairs]
    ttc_calls = [
        (ex, ey, evx, evy, bx, by, bvx, bvy, 2.0, 10.0)
        for ex, ey, evx, evy, bx, by, bvx, bvy in pairs
    ]

    print(f"numba available: {_kernels.HAVE_NUMBA}")
    _bench("first_within_eps (numpy)", _kernels.first_within_eps_numpy, eps_calls)
    _bench("min_ttc (numpy)", _kernels.min_ttc_numpy, ttc_calls)
    if _kernels.HAVE_NUMBA:
        # warm the JIT outside the timed region
        _kernels.first_within_eps_numba(*eps_calls[0])
        _kernels.min_ttc_numba(*ttc_calls[0])
        _bench("first_within_eps (numba)", _kernels.first_within_eps_numba, eps_calls)
        _bench("min_ttc (numba)", _kernels.min_ttc_numba, ttc_calls)
    else:
        print("numba path skipped (unset ADVSCEN_NO_NUMBA and install numba to compare)")


if __name__ == "__main__":
    main()
