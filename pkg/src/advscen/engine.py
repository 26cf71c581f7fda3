"""Closed-loop episode generation: rollout, refinement, and campaigns."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import behaviors, dsl, llmio, membank, metrics, planner, scene
from .analyzer import AnalyzerVerdict
from .behaviors import BehaviorSpec
from .metrics import CollisionConfig, EpisodeMetrics


@dataclass(frozen=True)
class EgoPolicy:
    kind: str = "replay"  # replay | reactive
    cruise_speed: Optional[float] = None  # None: logged current speed
    brake_decel: float = -6.0
    ttc_trigger: float = 1.5

    def __post_init__(self):
        if self.kind not in ("replay", "reactive"):
            raise ValueError(f"unknown ego policy kind {self.kind!r}")
        if self.brake_decel >= 0:
            raise ValueError("brake_decel must be negative")
        if self.ttc_trigger <= 0:
            raise ValueError("ttc_trigger must be positive")


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 5
    accel_escalation: float = 1.3
    gap_tighten: float = 0.25
    criticality_ttc: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.accel_escalation <= 1:
            raise ValueError("accel_escalation must be > 1")
        if not (0 < self.gap_tighten < 1):
            raise ValueError("gap_tighten must lie in (0, 1)")


@dataclass(frozen=True)
class EpisodeResult:
    rollout: scene.Rollout
    metrics: EpisodeMetrics
    verdict: AnalyzerVerdict
    iterations_used: int
    memory_event: str  # hit | generated
    feasible: bool
    critical: bool
    bac_plan: tuple = ()  # untruncated planned critical-background future

    def to_doc(self) -> dict:
        em = self.metrics
        return {
            "intent": self.verdict.intent.display,
            "risk_level": self.verdict.risk_level,
            "y_acc": self.verdict.y_acc,
            "collided": em.collided,
            "collision_step": em.collision_step,
            "min_ttc": em.min_ttc,
            "min_separation": em.min_separation,
            "iterations_used": self.iterations_used,
            "memory_event": self.memory_event,
            "feasible": self.feasible,
            "critical": self.critical,
        }


def _const_velocity_future(point: scene.TrajectoryPoint, dt: float, steps: int):
    c, s = math.cos(point.heading), math.sin(point.heading)
    return [
        scene.TrajectoryPoint(
            x=point.x + point.speed * c * dt * (k + 1),
            y=point.y + point.speed * s * dt * (k + 1),
            heading=point.heading,
            speed=point.speed,
            t=point.t + dt * (k + 1),
        )
        for k in range(steps)
    ]


def _track_future(scenario: scene.Scenario, track: scene.Track):
    logged = scenario.logged_future(track)
    if logged is not None:
        return list(logged)
    return _const_velocity_future(scenario.current_state(track), scenario.dt, scenario.horizon_len)


def _instantaneous_ttc(p, q, eps: float) -> float:
    dx, dy = p.x - q.x, p.y - q.y
    dvx = p.speed * math.cos(p.heading) - q.speed * math.cos(q.heading)
    dvy = p.speed * math.sin(p.heading) - q.speed * math.sin(q.heading)
    c = dx * dx + dy * dy - eps * eps
    if c <= 0:
        return 0.0
    a = dvx * dvx + dvy * dvy
    if a <= 1e-12:
        return math.inf
    b = 2.0 * (dx * dvx + dy * dvy)
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return math.inf
    root = (-b - math.sqrt(disc)) / (2.0 * a)
    return root if root >= 0 else math.inf


def _reactive_ego_future(
    scenario: scene.Scenario,
    policy: EgoPolicy,
    others_futures: dict,
    config: CollisionConfig,
):
    """Advance along the ego lane at cruise speed; brake to a stop once the
    instantaneous TTC to the nearest vehicle drops below the trigger."""
    cur = scenario.current_state(scenario.ego)
    path = scene.projected_path(scenario, scenario.ego)
    speed = policy.cruise_speed if policy.cruise_speed is not None else cur.speed
    # arc-length position of the ego projection on its path
    seg_len = [
        math.hypot(path[i + 1][0] - path[i][0], path[i + 1][1] - path[i][1])
        for i in range(len(path) - 1)
    ]
    arc = 0.0
    braking = False
    points = []
    t = cur.t
    for k in range(scenario.horizon_len):
        # sample the neighbours at this step
        nearest = None
        nearest_d = math.inf
        for fut in others_futures.values():
            q = fut[k]
            d = math.hypot(q.x - _arc_point(path, seg_len, arc)[0], q.y - _arc_point(path, seg_len, arc)[1])
            if d < nearest_d:
                nearest_d = d
                nearest = q
        x, y = _arc_point(path, seg_len, arc)
        heading = _arc_heading(path, seg_len, arc)
        here = scene.TrajectoryPoint(x=x, y=y, heading=heading, speed=speed, t=t)
        if nearest is not None and _instantaneous_ttc(here, nearest, config.epsilon) < policy.ttc_trigger:
            braking = True
        if braking:
            speed = max(0.0, speed + policy.brake_decel * scenario.dt)
        arc += speed * scenario.dt
        t += scenario.dt
        x, y = _arc_point(path, seg_len, arc)
        points.append(
            scene.TrajectoryPoint(
                x=x, y=y, heading=_arc_heading(path, seg_len, arc), speed=speed, t=t
            )
        )
    return points


def _arc_point(path, seg_len, arc: float):
    remaining = arc
    for i, length in enumerate(seg_len):
        if remaining <= length or i == len(seg_len) - 1:
            if length < 1e-12:
                return path[i]
            u = remaining / length
            return (
                path[i][0] + u * (path[i + 1][0] - path[i][0]),
                path[i][1] + u * (path[i + 1][1] - path[i][1]),
            )
        remaining -= length
    return path[-1]


def _arc_heading(path, seg_len, arc: float) -> float:
    remaining = arc
    idx = len(seg_len) - 1
    for i, length in enumerate(seg_len):
        if remaining <= length:
            idx = i
            break
        remaining -= length
    dx = path[idx + 1][0] - path[idx][0]
    dy = path[idx + 1][1] - path[idx][1]
    return scene.norm_angle(math.atan2(dy, dx))


def _freeze_after(points, step: int):
    frozen = list(points[: step + 1])
    anchor = points[step]
    for p in points[step + 1 :]:
        frozen.append(
            scene.TrajectoryPoint(
                x=anchor.x, y=anchor.y, heading=anchor.heading, speed=anchor.speed, t=p.t
            )
        )
    return frozen


def rollout(
    scenario: scene.Scenario,
    ego_policy: EgoPolicy,
    bac_future,
    config: CollisionConfig,
) -> scene.Rollout:
    """Roll the scenario forward with the given critical-background future.

    Truncates at the first ego collision step: all later points are frozen
    at their collision-step positions.
    """
    if len(bac_future) != scenario.horizon_len:
        raise ValueError(
            f"bac_future has {len(bac_future)} points, want {scenario.horizon_len}"
        )
    futures = {}
    for tr in scenario.backgrounds:
        if tr.vehicle_id == scenario.critical_background_id:
            futures[tr.vehicle_id] = list(bac_future)
        else:
            futures[tr.vehicle_id] = _track_future(scenario, tr)
    if ego_policy.kind == "replay":
        ego_future = _track_future(scenario, scenario.ego)
    else:
        ego_future = _reactive_ego_future(scenario, ego_policy, futures, config)

    collision_step = None
    for k in range(scenario.horizon_len):
        pe = ego_future[k]
        for fut in futures.values():
            q = fut[k]
            if config.mode == "center_distance":
                hit = math.hypot(pe.x - q.x, pe.y - q.y) <= config.epsilon
            else:
                hit = metrics._rects_overlap(
                    metrics._rect_corners(pe, scenario.ego.length, scenario.ego.width),
                    metrics._rect_corners(q, *metrics.DEFAULT_FOOTPRINT),
                )
            if hit:
                collision_step = k
                break
        if collision_step is not None:
            break
    if collision_step is not None:
        ego_future = _freeze_after(ego_future, collision_step)
        futures = {vid: _freeze_after(fut, collision_step) for vid, fut in futures.items()}
    return scene.Rollout(
        scenario=scenario,
        ego_future=tuple(ego_future),
        background_futures=futures,
    )


def episode_metrics(roll: scene.Rollout, config: CollisionConfig) -> EpisodeMetrics:
    scenario = roll.scenario
    bac_future = roll.background_futures[scenario.critical_background_id]
    collided, step = metrics.collision_indicator(roll.ego_future, bac_future, config)
    return EpisodeMetrics(
        collided=collided,
        collision_step=step,
        min_ttc=metrics.min_ttc(roll.ego_future, bac_future, config),
        min_separation=metrics.min_separation(roll.ego_future, bac_future),
    )


# ---------------------------------------------------------------------------
# Refinement loop

_MODIFIER_SYSTEM = (
    "You adjust endpoint rules for adversarial driving maneuvers so that the "
    "resulting trajectory becomes more threatening while staying smooth."
)

_MODIFIER_TEMPLATE = """The endpoint rules below produced a trajectory that was not
critical enough (minimum separation {min_sep:.1f} m, minimum TTC {min_ttc}).

Current rules for "{label}":
X: {x}
Y: {y}
HEADING: {heading}
SPEED: {speed}

Propose adjusted rules in the same four-line format.
"""


def _consult_modifier(client, spec: BehaviorSpec, em: EpisodeMetrics, model: str):
    prompt = _MODIFIER_TEMPLATE.format(
        min_sep=em.min_separation,
        min_ttc="none" if em.min_ttc is None else f"{em.min_ttc:.2f} s",
        label=spec.label.display,
        **spec.rule.as_strings(),
    )
    messages = (
        {"role": "system", "content": _MODIFIER_SYSTEM},
        {"role": "user", "content": prompt},
    )
    try:
        reply = client.complete(llmio.ChatRequest(model=model, messages=messages))
        rule = membank._parse_generated_rule(reply.content)
    except (dsl.DslError, llmio.LlmError):
        return None  # rejected edits are ignored
    return BehaviorSpec(
        label=spec.label,
        rule=rule,
        accel_range=spec.accel_range,
        applicability=spec.applicability,
        source="refined",
        provenance=f"modifier edit of {spec.label.display!r}",
    )


def refine(
    scenario: scene.Scenario,
    verdict: AnalyzerVerdict,
    spec: BehaviorSpec,
    ego_policy: EgoPolicy,
    rconfig: RefinementConfig,
    cconfig: CollisionConfig,
    modifier=None,
    modifier_model: str = "default",
) -> EpisodeResult:
    """Escalate the adversarial plan until criticality or budget exhaustion."""
    a_min, a_max = spec.accel_range
    pconfig = planner.PlannerConfig(dt=scenario.dt, steps=scenario.horizon_len)
    ego_projection = _track_future(scenario, scenario.ego)
    ego_terminal = ego_projection[-1]
    bac_cur = scenario.current_state(scenario.critical_track)
    best = None
    iterations = 0
    current_spec = spec
    for i in range(1, rconfig.max_iterations + 1):
        iterations = i
        y_acc = verdict.y_acc * rconfig.accel_escalation ** (i - 1)
        y_acc = min(max(y_acc, a_min), a_max)
        endpoint = behaviors.infer_endpoint(current_spec, scenario, y_acc)
        shrink = max(0.0, 1.0 - rconfig.gap_tighten * (i - 1))
        endpoint = scene.TrajectoryPoint(
            x=ego_terminal.x + (endpoint.x - ego_terminal.x) * shrink,
            y=ego_terminal.y + (endpoint.y - ego_terminal.y) * shrink,
            heading=endpoint.heading,
            speed=endpoint.speed,
            t=endpoint.t,
        )
        plan = planner.plan_quintic(
            planner.BoundaryState.from_point(bac_cur),
            planner.BoundaryState.from_point(endpoint),
            pconfig,
        )
        plan = planner.shift_times(plan, bac_cur.t)
        report = planner.check_feasibility(plan, pconfig)
        roll = rollout(scenario, ego_policy, plan, cconfig)
        em = episode_metrics(roll, cconfig)
        critical = em.collided or (em.min_ttc is not None and em.min_ttc <= rconfig.criticality_ttc)
        candidate = EpisodeResult(
            rollout=roll,
            metrics=em,
            verdict=verdict,
            iterations_used=i,
            memory_event="hit",
            feasible=report.ok,
            critical=critical,
            bac_plan=tuple(plan),
        )
        if best is None or _episode_rank(candidate) < _episode_rank(best):
            best = candidate
        if critical:
            break
        if modifier is not None:
            edited = _consult_modifier(modifier, current_spec, em, modifier_model)
            if edited is not None:
                current_spec = edited
    assert best is not None
    return EpisodeResult(
        rollout=best.rollout,
        metrics=best.metrics,
        verdict=verdict,
        iterations_used=iterations,
        memory_event="hit",
        feasible=best.feasible,
        critical=best.critical,
        bac_plan=best.bac_plan,
    )


def _episode_rank(result: EpisodeResult):
    ttc = result.metrics.min_ttc
    return (
        0 if result.metrics.collided else 1,
        ttc if ttc is not None else math.inf,
        result.iterations_used,
    )


# ---------------------------------------------------------------------------
# Full episode and campaign


def generate_episode(
    scenario: scene.Scenario,
    analyze: Callable,
    bank: membank.MemoryBank,
    client=None,
    ego_policy: EgoPolicy = EgoPolicy(),
    rconfig: RefinementConfig = RefinementConfig(),
    cconfig: CollisionConfig = CollisionConfig(),
    modifier=None,
) -> EpisodeResult:
    """analyze -> resolve planner -> refine; marks bank entries verified."""
    verdict = analyze(scenario)
    spec, event = membank.resolve_planner(bank, verdict, client)
    result = refine(
        scenario, verdict, spec, ego_policy, rconfig, cconfig, modifier=modifier
    )
    if result.critical:
        bank.mark_verified(verdict.intent)
    return EpisodeResult(
        rollout=result.rollout,
        metrics=result.metrics,
        verdict=verdict,
        iterations_used=result.iterations_used,
        memory_event=event,
        feasible=result.feasible,
        critical=result.critical,
        bac_plan=result.bac_plan,
    )


def raw_baseline(scenario: scene.Scenario, cconfig: CollisionConfig) -> EpisodeMetrics:
    """Replay everything as logged; no adversarial substitution."""
    bac_future = _track_future(scenario, scenario.critical_track)
    roll = rollout(scenario, EgoPolicy(kind="replay"), bac_future, cconfig)
    return episode_metrics(roll, cconfig)


@dataclass
class CampaignRow:
    scenario_id: str
    result: Optional[EpisodeResult] = None
    error: Optional[str] = None


def kinematic_samples(points, dt: float):
    speeds = [p.speed for p in points]
    accels = list(np.diff(np.asarray(speeds)) / dt)
    return speeds, accels


def run_campaign(
    scenarios,
    analyze: Callable,
    bank: membank.MemoryBank,
    client=None,
    ego_policy: EgoPolicy = EgoPolicy(),
    rconfig: RefinementConfig = RefinementConfig(),
    cconfig: CollisionConfig = CollisionConfig(),
):
    """Generate an episode per scenario and aggregate campaign metrics.

    ``scenarios`` is a list of (scenario_id, Scenario). Individual episode
    failures are recorded per row and excluded from the aggregates.
    """
    if not scenarios:
        raise ValueError("scenario list must be nonempty")
    rows = []
    episode_stats = []
    raw_speed, raw_accel = [], []
    gen_speed, gen_accel, gen_lat = [], [], []
    for scenario_id, scenario in scenarios:
        for tr in scenario.backgrounds:
            logged = scenario.logged_future(tr)
            if logged is not None:
                s, a = kinematic_samples(logged, scenario.dt)
                raw_speed.extend(s)
                raw_accel.extend(a)
        row = CampaignRow(scenario_id=scenario_id)
        try:
            result = generate_episode(
                scenario, analyze, bank, client, ego_policy, rconfig, cconfig
            )
        except Exception as exc:  # per-episode isolation
            row.error = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row.result = result
        rows.append(row)
        episode_stats.append(result.metrics)
        s, a = kinematic_samples(result.bac_plan, scenario.dt)
        gen_speed.extend(s)
        gen_accel.extend(a)
        gen_lat.extend(metrics.lateral_accelerations(result.bac_plan).tolist())
    if not episode_stats:
        raise RuntimeError("all episodes failed")
    summary = metrics.aggregate_campaign(
        episode_stats,
        raw_samples={"speed": raw_speed, "accel": raw_accel},
        gen_samples={"speed": gen_speed, "accel": gen_accel, "lat_accel": gen_lat},
    )
    samples = {
        "raw_speed": raw_speed,
        "raw_accel": raw_accel,
        "gen_speed": gen_speed,
        "gen_accel": gen_accel,
    }
    return summary, rows, samples
