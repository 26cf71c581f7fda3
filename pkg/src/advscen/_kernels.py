"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Set ``ADVSCEN_NO_NUMBA=1`` to force the numpy path (useful for debugging
and for the benchmark in benchmarks/bench_kernels.py). Both paths compute
identical results.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("ADVSCEN_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError("numba disabled by ADVSCEN_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # no-op decorator
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def first_within_eps_numpy(ex, ey, bx, by, eps):
    """Earliest index where the center distance is <= eps, else -1."""
    d2 = (ex - bx) ** 2 + (ey - by) ** 2
    hits = np.nonzero(d2 <= eps * eps)[0]
    return int(hits[0]) if hits.size else -1


@njit(cache=True)
def first_within_eps_numba(ex, ey, bx, by, eps):
    eps2 = eps * eps
    for k in range(ex.shape[0]):
        dx = ex[k] - bx[k]
        dy = ey[k] - by[k]
        if dx * dx + dy * dy <= eps2:
            return k
    return -1


def min_ttc_numpy(px, py, pvx, pvy, qx, qy, qvx, qvy, eps, cap):
    """Minimum per-step constant-velocity TTC, or inf when none <= cap.

    Per step, TTC is the smallest tau >= 0 with the projected center
    distance <= eps (smaller root of the closest-approach quadratic).
    """
    dx = px - qx
    dy = py - qy
    dvx = pvx - qvx
    dvy = pvy - qvy
    a = dvx * dvx + dvy * dvy
    b = 2.0 * (dx * dvx + dy * dvy)
    c = dx * dx + dy * dy - eps * eps
    ttc = np.full(px.shape, np.inf)
    # already within eps
    ttc[c <= 0.0] = 0.0
    moving = (a > 1e-12) & (c > 0.0)
    disc = b * b - 4.0 * a * c
    valid = moving & (disc >= 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        root = (-b - np.sqrt(np.where(valid, disc, 0.0))) / (2.0 * np.where(a > 0, a, 1.0))
    take = valid & (root >= 0.0)
    ttc[take] = root[take]
    best = ttc.min() if ttc.size else np.inf
    return float(best) if best <= cap else float("inf")


@njit(cache=True)
def min_ttc_numba(px, py, pvx, pvy, qx, qy, qvx, qvy, eps, cap):
    best = np.inf
    for k in range(px.shape[0]):
        dx = px[k] - qx[k]
        dy = py[k] - qy[k]
        dvx = pvx[k] - qvx[k]
        dvy = pvy[k] - qvy[k]
        c = dx * dx + dy * dy - eps * eps
        if c <= 0.0:
            best = 0.0
            break
        a = dvx * dvx + dvy * dvy
        if a <= 1e-12:
            continue
        b = 2.0 * (dx * dvx + dy * dvy)
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            continue
        root = (-b - np.sqrt(disc)) / (2.0 * a)
        if 0.0 <= root < best:
            best = root
    if best <= cap:
        return best
    return np.inf


if HAVE_NUMBA:
    first_within_eps = first_within_eps_numba
    min_ttc_kernel = min_ttc_numba
else:
    first_within_eps = first_within_eps_numpy
    min_ttc_kernel = min_ttc_numpy
