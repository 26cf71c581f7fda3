"""Quintic trajectory synthesis and kinematic feasibility checking."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import metrics, scene


@dataclass(frozen=True)
class PlannerConfig:
    dt: float = 0.1
    steps: int = 80
    v_max: float = 30.0
    a_long_max: float = 8.0
    a_lat_max: float = 6.0

    def __post_init__(self):
        for name in ("dt", "steps", "v_max", "a_long_max", "a_lat_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"PlannerConfig.{name} must be positive")


@dataclass(frozen=True)
class BoundaryState:
    x: float
    y: float
    vx: float
    vy: float
    ax: float = 0.0
    ay: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "vx", "vy", "ax", "ay"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"BoundaryState.{name} is not finite")

    @classmethod
    def from_point(cls, p: scene.TrajectoryPoint, accel: float = 0.0) -> "BoundaryState":
        c, s = math.cos(p.heading), math.sin(p.heading)
        return cls(x=p.x, y=p.y, vx=p.speed * c, vy=p.speed * s, ax=accel * c, ay=accel * s)


def quintic_coefficients(p0, v0, a0, p1, v1, a1, duration):
    """Degree-5 coefficients matching position/velocity/acceleration at both ends."""
    T = duration
    c0 = p0
    c1 = v0
    c2 = a0 / 2.0
    mat = np.array(
        [
            [T**3, T**4, T**5],
            [3 * T**2, 4 * T**3, 5 * T**4],
            [6 * T, 12 * T**2, 20 * T**3],
        ]
    )
    rhs = np.array(
        [
            p1 - c0 - c1 * T - c2 * T**2,
            v1 - c1 - 2 * c2 * T,
            a1 - 2 * c2,
        ]
    )
    c3, c4, c5 = np.linalg.solve(mat, rhs)
    return np.array([c0, c1, c2, c3, c4, c5])


def _poly_eval(coeffs, tau):
    out = np.zeros_like(tau)
    for c in coeffs[::-1]:
        out = out * tau + c
    return out


def _poly_derivative(coeffs):
    return np.array([i * coeffs[i] for i in range(1, len(coeffs))])


def plan_quintic(start: BoundaryState, end: BoundaryState, config: PlannerConfig):
    """Per-axis quintic from start to end, sampled at dt over ``steps`` points.

    The returned sequence excludes the start point; the final sample lies
    exactly on the end boundary. Timestamps start at dt (relative time).
    """
    if config.steps < 2:
        raise ValueError("steps must be >= 2")
    duration = config.steps * config.dt
    cx = quintic_coefficients(start.x, start.vx, start.ax, end.x, end.vx, end.ax, duration)
    cy = quintic_coefficients(start.y, start.vy, start.ay, end.y, end.vy, end.ay, duration)
    tau = np.arange(1, config.steps + 1, dtype=np.float64) * config.dt
    xs = _poly_eval(cx, tau)
    ys = _poly_eval(cy, tau)
    vxs = _poly_eval(_poly_derivative(cx), tau)
    vys = _poly_eval(_poly_derivative(cy), tau)
    speeds = np.hypot(vxs, vys)
    points = []
    prev_heading = math.atan2(start.vy, start.vx) if math.hypot(start.vx, start.vy) >= 0.1 else 0.0
    for k in range(config.steps):
        if speeds[k] >= 0.1:
            heading = math.atan2(vys[k], vxs[k])
        else:
            heading = prev_heading
        heading = scene.norm_angle(heading)
        prev_heading = heading
        points.append(
            scene.TrajectoryPoint(
                x=float(xs[k]),
                y=float(ys[k]),
                heading=heading,
                speed=float(speeds[k]),
                t=float(tau[k]),
            )
        )
    return points


def shift_times(points, t0: float):
    """Re-base relative timestamps onto an absolute start time."""
    return [
        scene.TrajectoryPoint(x=p.x, y=p.y, heading=p.heading, speed=p.speed, t=t0 + p.t)
        for p in points
    ]


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    violations: tuple  # (step, kind, value)


def check_feasibility(trajectory, config: PlannerConfig) -> FeasibilityReport:
    """Flag speed, longitudinal- and lateral-acceleration limit violations."""
    if len(trajectory) < 3:
        raise ValueError("need at least 3 points")
    violations = []
    for k, p in enumerate(trajectory):
        if p.speed > config.v_max:
            violations.append((k, "speed", float(p.speed)))
    a_long = metrics.longitudinal_accelerations(trajectory, config.dt)
    for k, a in enumerate(a_long):
        if abs(a) > config.a_long_max:
            violations.append((k + 1, "long_accel", float(a)))
    a_lat = metrics.lateral_accelerations(trajectory)
    for k, a in enumerate(a_lat):
        if abs(a) > config.a_lat_max:
            violations.append((k + 1, "lat_accel", float(a)))
    return FeasibilityReport(ok=not violations, violations=tuple(violations))
