"""Surrogate safety metrics: collision predicate, TTC, distribution realism."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels

DEFAULT_EPSILON = 2.0
DEFAULT_TTC_CAP = 10.0
DEFAULT_LAT_ACCEL_THRESHOLD = 4.0
DEFAULT_KL_BINS = 50
DEFAULT_FOOTPRINT = (4.8, 2.0)  # length, width


@dataclass(frozen=True)
class CollisionConfig:
    epsilon: float = DEFAULT_EPSILON
    mode: str = "center_distance"  # center_distance | oriented_rectangle

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.mode not in ("center_distance", "oriented_rectangle"):
            raise ValueError(f"unknown collision mode {self.mode!r}")


@dataclass(frozen=True)
class EpisodeMetrics:
    collided: bool
    collision_step: Optional[int]
    min_ttc: Optional[float]
    min_separation: float

    def __post_init__(self):
        if self.collided and self.collision_step is None:
            raise ValueError("collided episode must carry a collision step")


@dataclass(frozen=True)
class CampaignMetrics:
    mean_min_ttc: Optional[float]
    finite_ttc_count: int
    collision_rate: float
    kl_speed: float
    kl_accel: float
    abnormal_lat_accel_fraction: float


def _as_arrays(points):
    xs = np.array([p.x for p in points], dtype=np.float64)
    ys = np.array([p.y for p in points], dtype=np.float64)
    return xs, ys


def _velocity_arrays(points):
    h = np.array([p.heading for p in points], dtype=np.float64)
    v = np.array([p.speed for p in points], dtype=np.float64)
    return v * np.cos(h), v * np.sin(h)


def _rect_corners(p, length, width):
    c, s = math.cos(p.heading), math.sin(p.heading)
    hl, hw = length / 2.0, width / 2.0
    return [
        (p.x + c * dx - s * dy, p.y + s * dx + c * dy)
        for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))
    ]


def _rects_overlap(ca, cb) -> bool:
    # Separating-axis test for two convex quads.
    for corners in (ca, cb):
        for i in range(4):
            x1, y1 = corners[i]
            x2, y2 = corners[(i + 1) % 4]
            ax, ay = y1 - y2, x2 - x1  # outward-ish normal
            proj_a = [ax * x + ay * y for x, y in ca]
            proj_b = [ax * x + ay * y for x, y in cb]
            if max(proj_a) < min(proj_b) or max(proj_b) < min(proj_a):
                return False
    return True


def collision_indicator(
    ego_future,
    bac_future,
    config: CollisionConfig,
    footprints=(DEFAULT_FOOTPRINT, DEFAULT_FOOTPRINT),
):
    """Earliest step at which the two futures are in collision.

    Returns (collided, step) with step None when no collision occurs.
    """
    if len(ego_future) != len(bac_future):
        raise ValueError(
            f"length mismatch: {len(ego_future)} vs {len(bac_future)}"
        )
    if config.mode == "center_distance":
        ex, ey = _as_arrays(ego_future)
        bx, by = _as_arrays(bac_future)
        step = _kernels.first_within_eps(ex, ey, bx, by, config.epsilon)
        if step < 0:
            return False, None
        return True, int(step)
    (la, wa), (lb, wb) = footprints
    for k, (pe, pb) in enumerate(zip(ego_future, bac_future)):
        if _rects_overlap(_rect_corners(pe, la, wa), _rect_corners(pb, lb, wb)):
            return True, k
    return False, None


def min_ttc(
    ego_future,
    bac_future,
    config: CollisionConfig,
    ttc_cap: float = DEFAULT_TTC_CAP,
) -> Optional[float]:
    """Minimum per-step constant-velocity TTC, or None when none <= cap."""
    if len(ego_future) != len(bac_future):
        raise ValueError(
            f"length mismatch: {len(ego_future)} vs {len(bac_future)}"
        )
    if ttc_cap <= 0:
        raise ValueError("ttc_cap must be positive")
    ex, ey = _as_arrays(ego_future)
    bx, by = _as_arrays(bac_future)
    evx, evy = _velocity_arrays(ego_future)
    bvx, bvy = _velocity_arrays(bac_future)
    result = _kernels.min_ttc_kernel(
        ex, ey, evx, evy, bx, by, bvx, bvy, config.epsilon, ttc_cap
    )
    return None if math.isinf(result) else float(result)


def min_separation(ego_future, bac_future) -> float:
    if len(ego_future) != len(bac_future):
        raise ValueError("length mismatch")
    ex, ey = _as_arrays(ego_future)
    bx, by = _as_arrays(bac_future)
    return float(np.hypot(ex - bx, ey - by).min())


def kl_divergence(samples_p, samples_q, bins: int = DEFAULT_KL_BINS) -> float:
    """Histogram KL divergence over the pooled sample range, in nats."""
    if len(samples_p) == 0 or len(samples_q) == 0:
        raise ValueError("samples must be nonempty")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    p_arr = np.asarray(samples_p, dtype=np.float64)
    q_arr = np.asarray(samples_q, dtype=np.float64)
    lo = min(p_arr.min(), q_arr.min())
    hi = max(p_arr.max(), q_arr.max())
    if lo == hi:
        hi = lo + 1.0
    p_hist, _ = np.histogram(p_arr, bins=bins, range=(lo, hi))
    q_hist, _ = np.histogram(q_arr, bins=bins, range=(lo, hi))
    p = p_hist.astype(np.float64) + 1e-6
    q = q_hist.astype(np.float64) + 1e-6
    p /= p.sum()
    q /= q.sum()
    return float(np.sum(p * np.log(p / q)))


def histogram_table(samples, bins: int = DEFAULT_KL_BINS, value_range=None):
    """(bin_center, density) rows for plotting."""
    arr = np.asarray(samples, dtype=np.float64)
    if value_range is None:
        lo, hi = float(arr.min()), float(arr.max())
        if lo == hi:
            hi = lo + 1.0
        value_range = (lo, hi)
    hist, edges = np.histogram(arr, bins=bins, range=value_range, density=True)
    centers = (edges[:-1] + edges[1:]) / 2.0
    return list(zip(centers.tolist(), hist.tolist()))


def curvatures(points) -> np.ndarray:
    """Unsigned curvature per interior point via the circumscribed circle."""
    xs, ys = _as_arrays(points)
    ax, ay = xs[:-2], ys[:-2]
    bx, by = xs[1:-1], ys[1:-1]
    cx, cy = xs[2:], ys[2:]
    cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    d_ab = np.hypot(bx - ax, by - ay)
    d_bc = np.hypot(cx - bx, cy - by)
    d_ca = np.hypot(cx - ax, cy - ay)
    denom = d_ab * d_bc * d_ca
    with np.errstate(invalid="ignore", divide="ignore"):
        kappa = np.where(denom > 1e-9, 2.0 * np.abs(cross) / np.where(denom > 0, denom, 1.0), 0.0)
    return kappa


def lateral_accelerations(points) -> np.ndarray:
    """|a_lat| = v^2 * kappa at each interior sample."""
    if len(points) < 3:
        raise ValueError("need at least 3 points")
    v = np.array([p.speed for p in points[1:-1]], dtype=np.float64)
    return v * v * curvatures(points)


def abnormal_lat_accel_fraction(
    trajectory, threshold: float = DEFAULT_LAT_ACCEL_THRESHOLD
) -> float:
    """Fraction of interior samples with |a_lat| above the threshold."""
    a_lat = lateral_accelerations(trajectory)
    if a_lat.size == 0:
        return 0.0
    return float(np.mean(a_lat > threshold))


def longitudinal_accelerations(points, dt: float) -> np.ndarray:
    v = np.array([p.speed for p in points], dtype=np.float64)
    return np.diff(v) / dt


def aggregate_campaign(
    episodes,
    raw_samples: dict,
    gen_samples: dict,
    bins: int = DEFAULT_KL_BINS,
) -> CampaignMetrics:
    """Summarize a campaign; kinematic sample dicts carry 'speed' and 'accel'
    lists plus the generated trajectories' lateral accelerations."""
    if not episodes:
        raise ValueError("episode list must be nonempty")
    finite = [em.min_ttc for em in episodes if em.min_ttc is not None]
    mean_ttc = float(np.mean(finite)) if finite else None
    rate = sum(1 for em in episodes if em.collided) / len(episodes)
    kl_speed = kl_divergence(gen_samples["speed"], raw_samples["speed"], bins)
    kl_accel = kl_divergence(gen_samples["accel"], raw_samples["accel"], bins)
    lat = np.asarray(gen_samples.get("lat_accel", []), dtype=np.float64)
    lat_frac = float(np.mean(lat > DEFAULT_LAT_ACCEL_THRESHOLD)) if lat.size else 0.0
    return CampaignMetrics(
        mean_min_ttc=mean_ttc,
        finite_ttc_count=len(finite),
        collision_rate=rate,
        kl_speed=kl_speed,
        kl_accel=kl_accel,
        abnormal_lat_accel_fraction=lat_frac,
    )
