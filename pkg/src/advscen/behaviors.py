"""Behavior library: intent labels, endpoint rules, and the seven builtins.

Endpoint rules evaluate in the ego frame at the current step; the inferred
endpoint is mapped back to world coordinates.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from . import dsl, scene

LANE_WIDTH = 3.5

_PUNCT_RE = re.compile(r"[^a-z0-9]+")


def canonical_tokens(text: str) -> tuple:
    """Lowercase, strip punctuation, collapse whitespace, sort tokens."""
    tokens = [tok for tok in _PUNCT_RE.split(text.lower()) if tok]
    return tuple(sorted(tokens))


@dataclass(frozen=True)
class IntentLabel:
    canonical: str
    display: str

    @classmethod
    def of(cls, display: str) -> "IntentLabel":
        tokens = canonical_tokens(display)
        if not tokens:
            raise ValueError(f"empty intent label: {display!r}")
        return cls(canonical=" ".join(tokens), display=display)

    @property
    def tokens(self) -> frozenset:
        return frozenset(self.canonical.split())

    def similarity(self, other: "IntentLabel") -> float:
        """Jaccard index over canonical token sets."""
        a, b = self.tokens, other.tokens
        union = a | b
        if not union:
            return 1.0
        return len(a & b) / len(union)


@dataclass(frozen=True)
class EndpointRule:
    expr_x: object
    expr_y: object
    expr_heading: object
    expr_speed: object

    @classmethod
    def parse(cls, x: str, y: str, heading: str, speed: str) -> "EndpointRule":
        return cls(
            expr_x=dsl.parse_rule(x),
            expr_y=dsl.parse_rule(y),
            expr_heading=dsl.parse_rule(heading),
            expr_speed=dsl.parse_rule(speed),
        )

    def exprs(self):
        return {
            "x": self.expr_x,
            "y": self.expr_y,
            "heading": self.expr_heading,
            "speed": self.expr_speed,
        }

    def as_strings(self) -> dict:
        return {name: dsl.format_expr(ast) for name, ast in self.exprs().items()}


@dataclass(frozen=True)
class BehaviorSpec:
    label: IntentLabel
    rule: EndpointRule
    accel_range: tuple  # (a_min, a_max) m/s^2
    applicability: str  # any | straight_only | intersection_only
    source: str = "builtin"  # builtin | generated | refined
    provenance: str = ""

    def __post_init__(self):
        a_min, a_max = self.accel_range
        if a_min > a_max:
            raise ValueError(f"accel_range inverted: {self.accel_range}")
        object.__setattr__(self, "accel_range", (float(a_min), float(a_max)))
        if self.applicability not in ("any", "straight_only", "intersection_only"):
            raise ValueError(f"unknown applicability {self.applicability!r}")
        if self.source not in ("builtin", "generated", "refined"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.source in ("generated", "refined") and not self.provenance:
            raise ValueError(f"{self.source} spec requires provenance text")

    def applies_to(self, kind: str) -> bool:
        if self.applicability == "any":
            return True
        return self.applicability == f"{kind}_only"

    def to_doc(self) -> dict:
        return {
            "label": self.label.canonical,
            "display": self.label.display,
            "rule": self.rule.as_strings(),
            "accel_range": list(self.accel_range),
            "applicability": self.applicability,
            "source": self.source,
            "provenance": self.provenance,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "BehaviorSpec":
        rule = doc["rule"]
        return cls(
            label=IntentLabel(canonical=doc["label"], display=doc["display"]),
            rule=EndpointRule.parse(
                rule["x"], rule["y"], rule["heading"], rule["speed"]
            ),
            accel_range=tuple(doc["accel_range"]),
            applicability=doc["applicability"],
            source=doc.get("source", "builtin"),
            provenance=doc.get("provenance", ""),
        )


# ---------------------------------------------------------------------------
# Builtin library

_BUILTIN_DEFS = [
    # (display, x, y, heading, speed, accel_range, applicability)
    (
        "Emergency Braking",
        "x + v^2 / (2 * abs(a))", "y", "h", "0",
        (-8.0, -2.0), "any",
    ),
    (
        "Close Car-following",
        "ego_x + ego_v * T - 1.5", "ego_y", "ego_h", "ego_v",
        (-2.0, 3.0), "any",
    ),
    (
        "Aggressive Cut-in",
        "ego_x + ego_v * T + 1.5", "ego_y", "ego_h", "ego_v",
        (-2.0, 3.0), "straight_only",
    ),
    (
        "Opposite Direction Intrusion",
        "ego_v * x / (ego_v + v + 0.1)", "ego_y", "h", "0",
        (-2.0, 3.0), "straight_only",
    ),
    (
        "Intersection Rush-through Turn Left",
        "cross_x", "cross_y", "h + 1.5707963", "max(v, 3)",
        (0.0, 3.0), "intersection_only",
    ),
    (
        "Intersection Rush-through Go-straight",
        "cross_x", "cross_y", "h", "max(v, 3)",
        (0.0, 3.0), "intersection_only",
    ),
    (
        "Straight Lane Shift",
        "x + v * cos(h) * T", "y + lane_w", "h", "v",
        (-2.0, 3.0), "straight_only",
    ),
]

_SELF_CHECK_ENV = {
    "x": 12.0, "y": -3.5, "h": 0.2, "v": 9.0, "a": -4.0,
    "T": 8.0, "t": 1.0, "dt": 0.1,
    "ego_x": 0.0, "ego_y": 0.0, "ego_h": 0.0, "ego_v": 10.0,
    "lane_w": LANE_WIDTH, "cross_x": 40.0, "cross_y": 0.0,
}


def builtin_library() -> list:
    """The seven builtin safety-critical behaviors, self-checked at load."""
    specs = []
    for display, ex, ey, eh, ev, accel, applic in _BUILTIN_DEFS:
        rule = EndpointRule.parse(ex, ey, eh, ev)
        spec = BehaviorSpec(
            label=IntentLabel.of(display),
            rule=rule,
            accel_range=accel,
            applicability=applic,
        )
        for name, ast in rule.exprs().items():
            reparsed = dsl.parse_rule(dsl.format_expr(ast))
            if reparsed != ast:
                raise AssertionError(f"builtin {display}: {name} rule not print-stable")
            dsl.eval_expr(ast, _SELF_CHECK_ENV)
        specs.append(spec)
    return specs


# ---------------------------------------------------------------------------
# Endpoint inference


def rule_environment(scenario: scene.Scenario, y_acc: float) -> dict:
    """Ego-frame environment for endpoint-rule evaluation."""
    pose = scenario.ego_pose
    ego_cur = scenario.current_state(scenario.ego)
    bac = scenario.critical_track
    bac_cur = scenario.current_state(bac)
    bx, by = scene.to_ego_frame((bac_cur.x, bac_cur.y), pose)
    cross = scene.paths_cross(scenario, bac)
    if cross is None:
        cx, cy = 0.0, 0.0
    else:
        cx, cy = scene.to_ego_frame(cross, pose)
    return {
        "x": bx,
        "y": by,
        "h": scene.norm_angle(bac_cur.heading - pose.heading),
        "v": bac_cur.speed,
        "a": y_acc,
        "T": scenario.horizon_len * scenario.dt,
        "t": scenario.current_time,
        "dt": scenario.dt,
        "ego_x": 0.0,
        "ego_y": 0.0,
        "ego_h": 0.0,
        "ego_v": ego_cur.speed,
        "lane_w": LANE_WIDTH,
        "cross_x": cx,
        "cross_y": cy,
    }


def infer_endpoint(
    spec: BehaviorSpec, scenario: scene.Scenario, y_acc: float
) -> scene.TrajectoryPoint:
    """Evaluate a behavior's endpoint rule; endpoint in world coordinates."""
    a_min, a_max = spec.accel_range
    if not (a_min <= y_acc <= a_max):
        raise ValueError(
            f"y_acc {y_acc} outside accel_range [{a_min}, {a_max}] "
            f"of {spec.label.display}"
        )
    kind = scene.scenario_kind(scenario)
    if not spec.applies_to(kind):
        raise ValueError(f"{spec.label.display} not applicable to {kind} scenario")
    env = rule_environment(scenario, y_acc)
    values = {}
    for name, ast in spec.rule.exprs().items():
        try:
            values[name] = dsl.eval_expr(ast, env)
        except dsl.DslError as exc:
            raise dsl.EvalError(f"rule {name!r} of {spec.label.display}: {exc}") from exc
    pose = scenario.ego_pose
    wx, wy = scene.from_ego_frame((values["x"], values["y"]), pose)
    return scene.TrajectoryPoint(
        x=wx,
        y=wy,
        heading=scene.norm_angle(values["heading"] + pose.heading),
        speed=max(0.0, values["speed"]),
        t=scenario.current_time + scenario.horizon_len * scenario.dt,
    )
