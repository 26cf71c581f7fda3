"""Scenario data model, ego-frame transforms, and scenario file I/O.

Coordinates are meters in a flat world frame, headings in radians in
(-pi, pi], timestamps in seconds at a uniform step. Tracks carry the
observed history and, optionally, a logged future of exactly
``horizon_len`` additional points.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

TAU = 2.0 * math.pi


class SchemaError(ValueError):
    """Raised when a scenario document violates the file schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def norm_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(a, TAU)
    if r <= -math.pi:
        return math.pi
    return r


def _check_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name}: non-finite value {v!r}")


@dataclass(frozen=True)
class TrajectoryPoint:
    x: float
    y: float
    heading: float
    speed: float
    t: float

    def __post_init__(self):
        _check_finite("TrajectoryPoint", self.x, self.y, self.heading, self.speed, self.t)
        if self.speed < 0:
            raise ValueError(f"TrajectoryPoint: negative speed {self.speed}")
        if not (-math.pi < self.heading <= math.pi):
            raise ValueError(f"TrajectoryPoint: heading {self.heading} outside (-pi, pi]")


@dataclass(frozen=True)
class Track:
    vehicle_id: str
    length: float
    width: float
    points: tuple

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"Track {self.vehicle_id}: nonpositive footprint")
        if not self.points:
            raise ValueError(f"Track {self.vehicle_id}: empty point list")
        object.__setattr__(self, "points", tuple(self.points))
        ts = [p.t for p in self.points]
        if len(ts) >= 2:
            dt0 = ts[1] - ts[0]
            if dt0 <= 0:
                raise ValueError(f"Track {self.vehicle_id}: non-increasing timestamps")
            for i in range(1, len(ts)):
                if abs((ts[i] - ts[i - 1]) - dt0) > 1e-9:
                    raise ValueError(
                        f"Track {self.vehicle_id}: nonuniform dt at index {i} "
                        f"({ts[i] - ts[i - 1]:.12f} vs {dt0:.12f})"
                    )

    @property
    def dt(self) -> float:
        if len(self.points) < 2:
            return 0.0
        return self.points[1].t - self.points[0].t


@dataclass(frozen=True)
class Lane:
    lane_id: str
    centerline: tuple
    kind: str  # straight | left_turn | right_turn
    successor_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "centerline", tuple(tuple(p) for p in self.centerline))
        object.__setattr__(self, "successor_ids", tuple(self.successor_ids))
        if len(self.centerline) < 2:
            raise ValueError(f"Lane {self.lane_id}: centerline needs >= 2 points")
        if self.kind not in ("straight", "left_turn", "right_turn"):
            raise ValueError(f"Lane {self.lane_id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class MapGeometry:
    lanes: tuple

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        ids = {ln.lane_id for ln in self.lanes}
        for ln in self.lanes:
            for sid in ln.successor_ids:
                if sid not in ids:
                    raise ValueError(f"Lane {ln.lane_id}: unknown successor {sid!r}")

    def lane(self, lane_id: str) -> Lane:
        for ln in self.lanes:
            if ln.lane_id == lane_id:
                return ln
        raise KeyError(lane_id)


@dataclass(frozen=True)
class EgoPose:
    origin: tuple  # (x, y)
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        _check_finite("EgoPose", self.origin[0], self.origin[1], self.heading)


@dataclass(frozen=True)
class Scenario:
    map: MapGeometry
    ego: Track
    backgrounds: tuple
    critical_background_id: str
    dt: float
    history_len: int
    horizon_len: int

    def __post_init__(self):
        object.__setattr__(self, "backgrounds", tuple(self.backgrounds))
        if self.dt <= 0:
            raise ValueError("Scenario: dt must be positive")
        if self.history_len < 1 or self.horizon_len < 1:
            raise ValueError("Scenario: history_len and horizon_len must be >= 1")
        if self.critical_background_id not in {tr.vehicle_id for tr in self.backgrounds}:
            raise ValueError(
                f"Scenario: unknown critical_background_id {self.critical_background_id!r}"
            )
        for tr in (self.ego,) + self.backgrounds:
            n = len(tr.points)
            if n < self.history_len:
                raise ValueError(f"Track {tr.vehicle_id}: fewer points than history_len")
            if n not in (self.history_len, self.history_len + self.horizon_len):
                raise ValueError(
                    f"Track {tr.vehicle_id}: point count {n} is neither history_len "
                    f"nor history_len + horizon_len"
                )
            if n >= 2 and abs(tr.dt - self.dt) > 1e-9:
                raise ValueError(f"Track {tr.vehicle_id}: dt {tr.dt} does not match scenario dt")
            if abs(tr.points[0].t - self.ego.points[0].t) > 1e-9:
                raise ValueError(f"Track {tr.vehicle_id}: start time misaligned with ego")

    @property
    def current_time(self) -> float:
        return self.ego.points[self.history_len - 1].t

    @property
    def critical_track(self) -> Track:
        for tr in self.backgrounds:
            if tr.vehicle_id == self.critical_background_id:
                return tr
        raise AssertionError("unreachable")

    def history(self, track: Track) -> tuple:
        return track.points[: self.history_len]

    def logged_future(self, track: Track):
        """Logged future points beyond the history, or None when absent."""
        if len(track.points) == self.history_len:
            return None
        return track.points[self.history_len :]

    def current_state(self, track: Track) -> TrajectoryPoint:
        return track.points[self.history_len - 1]

    @property
    def ego_pose(self) -> EgoPose:
        cur = self.current_state(self.ego)
        return EgoPose((cur.x, cur.y), cur.heading)


@dataclass(frozen=True)
class Rollout:
    scenario: Scenario
    ego_future: tuple
    background_futures: dict

    def __post_init__(self):
        object.__setattr__(self, "ego_future", tuple(self.ego_future))
        object.__setattr__(
            self, "background_futures", {k: tuple(v) for k, v in self.background_futures.items()}
        )
        n = self.scenario.horizon_len
        if len(self.ego_future) != n:
            raise ValueError(f"Rollout: ego future has {len(self.ego_future)} points, want {n}")
        for vid, fut in self.background_futures.items():
            if len(fut) != n:
                raise ValueError(f"Rollout: future of {vid} has {len(fut)} points, want {n}")


# ---------------------------------------------------------------------------
# Ego-frame transforms


def to_ego_frame(point, pose: EgoPose):
    """Rotate/translate a world point into the ego-centered frame."""
    px, py = float(point[0]), float(point[1])
    _check_finite("to_ego_frame", px, py)
    dx = px - pose.origin[0]
    dy = py - pose.origin[1]
    c = math.cos(pose.heading)
    s = math.sin(pose.heading)
    return (c * dx + s * dy, -s * dx + c * dy)


def from_ego_frame(point, pose: EgoPose):
    """Exact inverse of :func:`to_ego_frame`."""
    px, py = float(point[0]), float(point[1])
    _check_finite("from_ego_frame", px, py)
    c = math.cos(pose.heading)
    s = math.sin(pose.heading)
    return (pose.origin[0] + c * px - s * py, pose.origin[1] + s * px + c * py)


# ---------------------------------------------------------------------------
# Canonical serialization

_SCHEMA_VERSION = 1


def _fmt_float(v: float) -> str:
    if v == 0.0:
        v = 0.0  # fold -0.0
    return format(v, ".6f")


def _fmt_heading(v: float) -> str:
    # Keep 6-decimal roundings of +/-pi inside (-pi, pi].
    text = _fmt_float(v)
    parsed = float(text)
    if parsed > math.pi:
        text = _fmt_float(parsed - 1e-6)
    elif parsed <= -math.pi:
        text = _fmt_float(parsed + 1e-6)
    return text


class _RawNum(str):
    """Pre-formatted numeric literal, emitted verbatim."""


def canonical_dumps(obj) -> str:
    """Serialize to JSON with sorted keys and fixed 6-decimal floats."""
    out = []
    _emit(obj, out)
    return "".join(out)


def _emit(obj, out) -> None:
    if isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _emit(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_fmt_float(obj))
    elif isinstance(obj, _RawNum):
        out.append(str(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _track_to_doc(track: Track) -> dict:
    return {
        "vehicle_id": track.vehicle_id,
        "length": track.length,
        "width": track.width,
        "points": [
            [
                _RawNum(_fmt_float(p.t)),
                _RawNum(_fmt_float(p.x)),
                _RawNum(_fmt_float(p.y)),
                _RawNum(_fmt_heading(p.heading)),
                _RawNum(_fmt_float(p.speed)),
            ]
            for p in track.points
        ],
    }


def scenario_to_text(scenario: Scenario) -> str:
    doc = {
        "version": _SCHEMA_VERSION,
        "dt": scenario.dt,
        "history_len": scenario.history_len,
        "horizon_len": scenario.horizon_len,
        "map": {
            "lanes": [
                {
                    "lane_id": ln.lane_id,
                    "kind": ln.kind,
                    "centerline": [[x, y] for x, y in ln.centerline],
                    "successor_ids": list(ln.successor_ids),
                }
                for ln in scenario.map.lanes
            ]
        },
        "ego": _track_to_doc(scenario.ego),
        "backgrounds": [_track_to_doc(tr) for tr in scenario.backgrounds],
        "critical_background_id": scenario.critical_background_id,
    }
    return canonical_dumps(doc)


def save_scenario(scenario: Scenario, path: str) -> None:
    text = scenario_to_text(scenario)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.write("\n")


def _req(doc: dict, key: str, path: str):
    if key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    return doc[key]


def _parse_point(row, path: str) -> TrajectoryPoint:
    if not isinstance(row, list) or len(row) != 5:
        raise SchemaError(path, "point row must be [t, x, y, heading, speed]")
    try:
        t, x, y, heading, speed = (float(v) for v in row)
        return TrajectoryPoint(x=x, y=y, heading=heading, speed=speed, t=t)
    except (TypeError, ValueError) as exc:
        raise SchemaError(path, str(exc)) from exc


def _parse_track(doc, path: str) -> Track:
    if not isinstance(doc, dict):
        raise SchemaError(path, "track must be an object")
    points = _req(doc, "points", path)
    if not isinstance(points, list) or not points:
        raise SchemaError(f"{path}.points", "empty track")
    try:
        return Track(
            vehicle_id=str(_req(doc, "vehicle_id", path)),
            length=float(_req(doc, "length", path)),
            width=float(_req(doc, "width", path)),
            points=tuple(
                _parse_point(row, f"{path}.points[{i}]") for i, row in enumerate(points)
            ),
        )
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(path, str(exc)) from exc


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be an object")
    version = _req(doc, "version", "$")
    if version != _SCHEMA_VERSION:
        raise SchemaError("$.version", f"unsupported version {version!r}")
    map_doc = _req(doc, "map", "$")
    lanes = []
    for i, ln in enumerate(_req(map_doc, "lanes", "$.map")):
        lp = f"$.map.lanes[{i}]"
        try:
            lanes.append(
                Lane(
                    lane_id=str(_req(ln, "lane_id", lp)),
                    kind=str(_req(ln, "kind", lp)),
                    centerline=tuple(
                        (float(p[0]), float(p[1])) for p in _req(ln, "centerline", lp)
                    ),
                    successor_ids=tuple(str(s) for s in ln.get("successor_ids", [])),
                )
            )
        except SchemaError:
            raise
        except (TypeError, ValueError, IndexError) as exc:
            raise SchemaError(lp, str(exc)) from exc
    try:
        geometry = MapGeometry(tuple(lanes))
    except ValueError as exc:
        raise SchemaError("$.map", str(exc)) from exc
    ego = _parse_track(_req(doc, "ego", "$"), "$.ego")
    backgrounds = tuple(
        _parse_track(tr, f"$.backgrounds[{i}]")
        for i, tr in enumerate(_req(doc, "backgrounds", "$"))
    )
    try:
        return Scenario(
            map=geometry,
            ego=ego,
            backgrounds=backgrounds,
            critical_background_id=str(_req(doc, "critical_background_id", "$")),
            dt=float(_req(doc, "dt", "$")),
            history_len=int(_req(doc, "history_len", "$")),
            horizon_len=int(_req(doc, "horizon_len", "$")),
        )
    except SchemaError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError("$", str(exc)) from exc


# ---------------------------------------------------------------------------
# Geometry helpers shared by the analyzer and behavior library


def segment_intersection(p1, p2, p3, p4):
    """Proper intersection point of two segments, or None.

    Collinear overlap does not count as a crossing (parallel or shared-lane
    paths are not conflicts).
    """
    x1, y1 = p1
    x2, y2 = p2
    x3, y3 = p3
    x4, y4 = p4
    d1x, d1y = x2 - x1, y2 - y1
    d2x, d2y = x4 - x3, y4 - y3
    denom = d1x * d2y - d1y * d2x
    if abs(denom) < 1e-12:
        return None
    s = ((x3 - x1) * d2y - (y3 - y1) * d2x) / denom
    u = ((x3 - x1) * d1y - (y3 - y1) * d1x) / denom
    if -1e-9 <= s <= 1 + 1e-9 and -1e-9 <= u <= 1 + 1e-9:
        return (x1 + s * d1x, y1 + s * d1y)
    return None


def polyline_intersection(a, b):
    """First proper crossing point of two polylines, or None."""
    for i in range(len(a) - 1):
        for j in range(len(b) - 1):
            pt = segment_intersection(a[i], a[i + 1], b[j], b[j + 1])
            if pt is not None:
                return pt
    return None


def nearest_lane(geometry: MapGeometry, point) -> Lane:
    """Lane whose centerline passes closest to the point."""
    best = None
    best_d = math.inf
    for ln in geometry.lanes:
        d = _point_polyline_distance(point, ln.centerline)
        if d < best_d:
            best_d = d
            best = ln
    return best


def _point_polyline_distance(point, polyline) -> float:
    px, py = point
    best = math.inf
    for i in range(len(polyline) - 1):
        x1, y1 = polyline[i]
        x2, y2 = polyline[i + 1]
        dx, dy = x2 - x1, y2 - y1
        ll = dx * dx + dy * dy
        if ll < 1e-12:
            d = math.hypot(px - x1, py - y1)
        else:
            u = max(0.0, min(1.0, ((px - x1) * dx + (py - y1) * dy) / ll))
            d = math.hypot(px - (x1 + u * dx), py - (y1 + u * dy))
        best = min(best, d)
    return best


def lane_path_from(geometry: MapGeometry, lane: Lane, point, max_successors: int = 2):
    """Centerline polyline from the projection of ``point`` onward,
    following successor lanes."""
    poly = list(lane.centerline)
    # index of the closest segment start
    best_i = 0
    best_d = math.inf
    for i in range(len(poly) - 1):
        d = _point_polyline_distance(point, (poly[i], poly[i + 1]))
        if d < best_d:
            best_d = d
            best_i = i
    path = list(poly[best_i:])
    current = lane
    for _ in range(max_successors):
        if not current.successor_ids:
            break
        current = geometry.lane(current.successor_ids[0])
        path.extend(current.centerline)
    return path


def projected_path(scenario: Scenario, track: Track):
    """Lane-following spatial path of a vehicle from its current position."""
    cur = scenario.current_state(track)
    lane = nearest_lane(scenario.map, (cur.x, cur.y))
    if lane is None:
        reach = max(cur.speed, 1.0) * scenario.horizon_len * scenario.dt + 10.0
        return [
            (cur.x, cur.y),
            (cur.x + reach * math.cos(cur.heading), cur.y + reach * math.sin(cur.heading)),
        ]
    return lane_path_from(scenario.map, lane, (cur.x, cur.y))


def paths_cross(scenario: Scenario, track: Track):
    """Crossing point of the ego path and a background vehicle's path."""
    return polyline_intersection(
        projected_path(scenario, scenario.ego), projected_path(scenario, track)
    )


def scenario_kind(scenario: Scenario) -> str:
    """Classify the scene as 'straight' or 'intersection'."""
    for ln in scenario.map.lanes:
        if ln.kind != "straight":
            return "intersection"
    ego_lane = nearest_lane(scenario.map, scenario.ego_pose.origin)
    for ln in scenario.map.lanes:
        if ln is ego_lane:
            continue
        if polyline_intersection(ego_lane.centerline, ln.centerline) is not None:
            return "intersection"
    return "straight"
