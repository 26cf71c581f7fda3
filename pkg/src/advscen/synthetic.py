"""Deterministic synthetic scene generation.

Scenes are desk-scale stand-ins for recorded traffic: every scene is benign
(collision-free when replayed as logged) but contains one critical
background vehicle in a configuration matching a known dangerous behavior.
"""
from __future__ import annotations

import math

import numpy as np

from . import scene
from .scene import Lane, MapGeometry, Scenario, Track, TrajectoryPoint

DT = 0.1
HISTORY_LEN = 11
HORIZON_LEN = 80
N_POINTS = HISTORY_LEN + HORIZON_LEN
VEHICLE_LENGTH = 4.8
VEHICLE_WIDTH = 2.0
LANE_W = 3.5

STRAIGHT_CASES = ("lead", "follow", "adjacent")
INTERSECTION_CASES = ("gostraight", "turnleft")
ALL_CASES = STRAIGHT_CASES + ("opposite", "laneshift") + INTERSECTION_CASES

_CASE_TAG = {name: i for i, name in enumerate(ALL_CASES)}


def _rng(case: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([_CASE_TAG[case], seed & 0xFFFFFFFF])


def _straight_track(vid, cur_x, cur_y, heading, speeds, length=VEHICLE_LENGTH, width=VEHICLE_WIDTH):
    """Track along a fixed heading; ``speeds`` has one value per sample and
    the position at the current step (index HISTORY_LEN - 1) is (cur_x, cur_y)."""
    speeds = np.asarray(speeds, dtype=np.float64)
    assert speeds.shape == (N_POINTS,)
    c, s = math.cos(heading), math.sin(heading)
    arc = np.concatenate([[0.0], np.cumsum(speeds[:-1] * DT)])
    arc -= arc[HISTORY_LEN - 1]
    points = [
        TrajectoryPoint(
            x=cur_x + c * arc[k],
            y=cur_y + s * arc[k],
            heading=scene.norm_angle(heading),
            speed=float(speeds[k]),
            t=k * DT,
        )
        for k in range(N_POINTS)
    ]
    return Track(vehicle_id=vid, length=length, width=width, points=tuple(points))


def _polyline_arclengths(poly):
    out = [0.0]
    for i in range(len(poly) - 1):
        out.append(out[-1] + math.hypot(poly[i + 1][0] - poly[i][0], poly[i + 1][1] - poly[i][1]))
    return out


def _point_at_arc(poly, arcs, s):
    s = min(max(s, 0.0), arcs[-1])
    for i in range(len(arcs) - 1):
        if s <= arcs[i + 1] or i == len(arcs) - 2:
            seg = arcs[i + 1] - arcs[i]
            u = 0.0 if seg < 1e-12 else (s - arcs[i]) / seg
            x = poly[i][0] + u * (poly[i + 1][0] - poly[i][0])
            y = poly[i][1] + u * (poly[i + 1][1] - poly[i][1])
            heading = math.atan2(poly[i + 1][1] - poly[i][1], poly[i + 1][0] - poly[i][0])
            return x, y, scene.norm_angle(heading)
    raise AssertionError("unreachable")


def _path_track(vid, poly, cur_arc, speeds):
    """Track following a polyline, with the current step at arc position cur_arc."""
    speeds = np.asarray(speeds, dtype=np.float64)
    arcs = _polyline_arclengths(poly)
    rel = np.concatenate([[0.0], np.cumsum(speeds[:-1] * DT)])
    rel -= rel[HISTORY_LEN - 1]
    points = []
    for k in range(N_POINTS):
        x, y, heading = _point_at_arc(poly, arcs, cur_arc + rel[k])
        points.append(
            TrajectoryPoint(x=x, y=y, heading=heading, speed=float(speeds[k]), t=k * DT)
        )
    return Track(
        vehicle_id=vid, length=VEHICLE_LENGTH, width=VEHICLE_WIDTH, points=tuple(points)
    )


def _const(v):
    return np.full(N_POINTS, float(v))


def _ramp(v0, v1):
    return np.linspace(float(v0), float(v1), N_POINTS)


# ---------------------------------------------------------------------------
# Straight-road scenes


def _straight_lanes(directions):
    """Parallel lanes; ``directions`` maps lane y-offset to +1 (east) or -1 (west)."""
    lanes = []
    for i, (y, sign) in enumerate(directions):
        if sign > 0:
            pts = ((-80.0, y), (260.0, y))
        else:
            pts = ((260.0, y), (-80.0, y))
        lanes.append(Lane(lane_id=f"l{i}", centerline=pts, kind="straight"))
    return MapGeometry(tuple(lanes))


def _build_straight(case: str, seed: int) -> Scenario:
    rng = _rng(case, seed)
    v_e = rng.uniform(8.0, 12.0)
    ego_y = LANE_W if case == "laneshift" else 0.0
    ego = _straight_track("ego", 0.0, ego_y, 0.0, _const(v_e))

    if case in ("lead", "follow"):
        dv = rng.uniform(0.9, 1.4)
        margin = rng.uniform(2.5, 5.5)
        gap = 2.0 + dv * (8.0 + margin)
        if case == "lead":
            bac = _straight_track("bac-0", gap, 0.0, 0.0, _const(v_e - dv))
        else:
            bac = _straight_track("bac-0", -gap, 0.0, 0.0, _const(v_e + dv))
        lanes = _straight_lanes([(0.0, 1), (LANE_W, 1)])
        other_y = LANE_W
    elif case == "adjacent":
        dx0 = rng.uniform(-5.0, 15.0)
        bac = _straight_track(
            "bac-0", dx0, LANE_W, 0.0, _const(v_e + rng.uniform(-0.5, 0.5))
        )
        lanes = _straight_lanes([(0.0, 1), (LANE_W, 1)])
        other_y = LANE_W
    elif case == "opposite":
        x0 = rng.uniform(45.0, 60.0)
        bac = _straight_track("bac-0", x0, LANE_W, math.pi, _const(rng.uniform(7.0, 9.0)))
        lanes = _straight_lanes([(0.0, 1), (LANE_W, -1)])
        other_y = LANE_W
    elif case == "laneshift":
        dx0 = rng.uniform(20.0, 28.0)
        bac = _straight_track(
            "bac-0", dx0, 0.0, 0.0, _const(v_e + rng.uniform(-0.5, 0.5))
        )
        lanes = _straight_lanes([(0.0, 1), (LANE_W, 1)])
        other_y = 0.0
    else:
        raise ValueError(f"unknown straight case {case!r}")

    # far-away vehicles with varied speed profiles keep the logged kinematic
    # distributions broad without interacting with the ego
    others = [
        _straight_track(
            "bac-1", 150.0, other_y if case == "opposite" else LANE_W,
            0.0 if case != "opposite" else 0.0,
            _ramp(rng.uniform(6.0, 12.0), rng.uniform(0.0, 0.5)),
        ),
        _straight_track(
            "bac-2", -110.0, LANE_W, 0.0, _ramp(rng.uniform(8.0, 10.0), rng.uniform(14.5, 16.0))
        ),
    ]
    return Scenario(
        map=lanes,
        ego=ego,
        backgrounds=(bac, *others),
        critical_background_id="bac-0",
        dt=DT,
        history_len=HISTORY_LEN,
        horizon_len=HORIZON_LEN,
    )


# ---------------------------------------------------------------------------
# Intersection scenes

_CROSS_X = 63.5


def _turn_lane_polyline():
    """Westbound approach on y=3.5 turning left (south) across the ego lane."""
    poly = [(140.0, LANE_W), (70.0, LANE_W)]
    cx, cy, r = 70.0, LANE_W - 6.0, 6.0
    for deg in range(100, 181, 10):
        th = math.radians(deg)
        poly.append((cx + r * math.cos(th), cy + r * math.sin(th)))
    poly.extend([(64.0, cy), (64.0, -80.0)])
    return tuple(poly)


def _build_intersection(case: str, seed: int) -> Scenario:
    rng = _rng(case, seed)
    v_e = rng.uniform(8.0, 11.0)
    t_reach = rng.uniform(6.8, 7.6)  # ego arrival time at the conflict point
    t_bac = t_reach + rng.uniform(2.3, 3.2)  # background arrives later: benign

    if case == "gostraight":
        ego_goal_x = _CROSS_X
        ego_lane = Lane("ego_lane", ((-80.0, 0.0), (220.0, 0.0)), "straight")
        cross_lane = Lane("cross_lane", ((_CROSS_X, 140.0), (_CROSS_X, -80.0)), "straight")
        west_lane = Lane("west_lane", ((220.0, LANE_W), (-80.0, LANE_W)), "straight")
        geometry = MapGeometry((ego_lane, cross_lane, west_lane))
        v_b = rng.uniform(8.0, 11.0)
        cur_y = v_b * (t_bac - 1.0)
        bac = _straight_track("bac-0", _CROSS_X, cur_y, -math.pi / 2, _const(v_b))
        others = [
            _straight_track("bac-1", -30.0, LANE_W, math.pi, _ramp(rng.uniform(6, 10), rng.uniform(0, 1))),
            _straight_track("bac-2", _CROSS_X, cur_y + 70.0, -math.pi / 2,
                            _ramp(rng.uniform(8, 10), rng.uniform(14.5, 16.0))),
        ]
    elif case == "turnleft":
        poly = _turn_lane_polyline()
        ego_lane = Lane("ego_lane", ((-80.0, 0.0), (220.0, 0.0)), "straight")
        turn_lane = Lane("turn_lane", poly, "left_turn")
        geometry = MapGeometry((ego_lane, turn_lane))
        cross = scene.polyline_intersection(ego_lane.centerline, poly)
        assert cross is not None
        ego_goal_x = cross[0]
        arcs = _polyline_arclengths(poly)
        # arc position of the conflict point on the turn lane
        arc_cross = None
        best_d = math.inf
        for probe in np.linspace(0.0, arcs[-1], 600):
            x, y, _ = _point_at_arc(poly, arcs, probe)
            d = math.hypot(x - cross[0], y - cross[1])
            if d < best_d:
                best_d = d
                arc_cross = probe
        speeds = _ramp(rng.uniform(8.5, 10.0), rng.uniform(4.0, 5.5))
        k_bac = int(round(t_bac / DT))
        travelled = float(np.sum(speeds[HISTORY_LEN - 1 : k_bac]) * DT)
        cur_arc = arc_cross - travelled
        bac = _path_track("bac-0", poly, cur_arc, speeds)
        others = [
            _straight_track("bac-1", _CROSS_X + 40.0, 0.0, 0.0,
                            _ramp(rng.uniform(6, 10), rng.uniform(0, 1))),
            _straight_track("bac-2", -130.0, 0.0, 0.0,
                            _ramp(rng.uniform(8, 10), rng.uniform(14.5, 16.0))),
        ]
    else:
        raise ValueError(f"unknown intersection case {case!r}")

    cur_x = ego_goal_x - v_e * (t_reach - 1.0)
    ego = _straight_track("ego", cur_x, 0.0, 0.0, _const(v_e))
    return Scenario(
        map=geometry,
        ego=ego,
        backgrounds=(bac, *others),
        critical_background_id="bac-0",
        dt=DT,
        history_len=HISTORY_LEN,
        horizon_len=HORIZON_LEN,
    )


# ---------------------------------------------------------------------------
# Public entry points


def build_case(case: str, seed: int) -> Scenario:
    """Build one scene of a named configuration (see ALL_CASES)."""
    if case in STRAIGHT_CASES or case in ("opposite", "laneshift"):
        return _build_straight(case, seed)
    if case in INTERSECTION_CASES:
        return _build_intersection(case, seed)
    raise ValueError(f"unknown case {case!r}")


def synth_scenario(kind: str, seed: int) -> Scenario:
    """Deterministic synthetic scene of the given kind."""
    if kind == "straight":
        return build_case(STRAIGHT_CASES[seed % 3], seed)
    if kind == "intersection":
        return build_case(INTERSECTION_CASES[seed % 2], seed)
    raise ValueError(f"unknown scenario kind {kind!r}")
