"""Behavioral-intent inference: prompt assembly, verdict parsing, the
LLM-backed analyzer, and a deterministic rule-based fallback."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional

from . import behaviors, llmio, scene
from .behaviors import LANE_WIDTH, IntentLabel

NOVELTY_DISTANCE = 0.4

RISK_LEVELS = ("low", "medium", "high")

BLOCK_HEADERS = (
    "## Role",
    "## Task Description",
    "## Structure of Input Variables",
    "## Analysis Requirements",
    "## Rules for Reference",
    "## Output Requirements",
)


class VerdictParseError(ValueError):
    pass


class AnalysisError(RuntimeError):
    def __init__(self, message: str, replies):
        super().__init__(message)
        self.replies = tuple(replies)


@dataclass(frozen=True)
class AnalyzerVerdict:
    intent: IntentLabel
    risk_level: str
    y_acc: float
    rationale: str = ""
    novel: bool = False

    def __post_init__(self):
        if self.risk_level not in RISK_LEVELS:
            raise ValueError(f"unknown risk level {self.risk_level!r}")
        if not math.isfinite(self.y_acc):
            raise ValueError("y_acc must be finite")


@dataclass(frozen=True)
class PromptBundle:
    role: str
    task_description: str
    input_structure: str
    analysis_requirements: str
    rules_for_reference: str
    output_requirements: str

    @property
    def rendered(self) -> str:
        blocks = (
            self.role,
            self.task_description,
            self.input_structure,
            self.analysis_requirements,
            self.rules_for_reference,
            self.output_requirements,
        )
        return "\n\n".join(
            f"{header}\n{body.strip()}" for header, body in zip(BLOCK_HEADERS, blocks)
        )


_ROLE = (
    "You are a traffic-safety behavior analyzer. You study driving scene "
    "histories and identify which background-vehicle maneuver would be most "
    "dangerous for the vehicle under test (the ego vehicle)."
)

_TASK = (
    "Given the road layout and the recent state histories of the ego vehicle "
    "and the background vehicles, select the single most safety-critical "
    "behavior the critical background vehicle could perform next, rate its "
    "risk, and assign a longitudinal acceleration for simulating it."
)

_INPUT_STRUCTURE_PREAMBLE = (
    "All positions are given in the ego-centered frame: the ego vehicle's "
    "current position is the origin and its current heading points along +x. "
    "Each vehicle is listed as a table with rows `t | x | y | heading | speed` "
    "(seconds, meters, radians, m/s)."
)

_FIVE_STEPS = (
    "Reason in five steps:\n"
    "1. Interpret the current states of the ego and background vehicles.\n"
    "2. Contextualize those states within the map topology.\n"
    "3. Infer the ego vehicle's likely intent.\n"
    "4. Select the behavior from the library that would create the highest "
    "risk for the ego vehicle (or propose a new label if none fits).\n"
    "5. Assign an appropriate longitudinal acceleration for that behavior."
)

_EXEMPLARS = (
    "Examples:\n"
    "- A background vehicle 15 m ahead of the ego in the same lane: "
    "BEHAVIOR: Emergency Braking | RISK: high | ACCEL: -6.0\n"
    "- A background vehicle alongside in the adjacent lane, slightly ahead: "
    "BEHAVIOR: Aggressive Cut-in | RISK: high | ACCEL: 2.0"
)

_RULES_FOR_REFERENCE = (
    "- Vehicles already inside an intersection have priority over entering ones.\n"
    "- A lead vehicle braking hard is most dangerous at short headway.\n"
    "- Lane changes are most dangerous when the gap to the ego is small.\n"
    "- Oncoming traffic is dangerous only when it can intrude into the ego lane.\n"
    "- Crossing traffic is dangerous when arrival times at the conflict point "
    "are similar."
)

_OUTPUT_REQUIREMENTS = (
    "End your reply with exactly one line in this format (it must be the last "
    "nonempty line):\n"
    "BEHAVIOR: <behavior name> | RISK: <low|medium|high> | ACCEL: <decimal m/s^2>"
)


def _state_table(points, pose: scene.EgoPose, max_rows: int = 11) -> str:
    stride = max(1, math.ceil(len(points) / max_rows))
    rows = list(points)[::stride][-max_rows:]
    lines = []
    for p in rows:
        x, y = scene.to_ego_frame((p.x, p.y), pose)
        h = scene.norm_angle(p.heading - pose.heading)
        lines.append(f"{p.t:.1f} | {x:.2f} | {y:.2f} | {h:.3f} | {p.speed:.2f}")
    return "\n".join(lines)


def _map_summary(scenario: scene.Scenario, pose: scene.EgoPose) -> str:
    lines = []
    for ln in scenario.map.lanes:
        first = scene.to_ego_frame(ln.centerline[0], pose)
        last = scene.to_ego_frame(ln.centerline[-1], pose)
        lines.append(
            f"lane {ln.lane_id} ({ln.kind}): from ({first[0]:.1f}, {first[1]:.1f}) "
            f"to ({last[0]:.1f}, {last[1]:.1f})"
        )
    return "\n".join(lines)


def build_prompt(scenario: scene.Scenario, library) -> PromptBundle:
    """Assemble the six-block analysis prompt over ego-frame inputs."""
    pose = scenario.ego_pose
    sections = [_INPUT_STRUCTURE_PREAMBLE, "Map lanes:\n" + _map_summary(scenario, pose)]
    sections.append(
        "Ego vehicle history:\n" + _state_table(scenario.history(scenario.ego), pose)
    )
    for tr in scenario.backgrounds:
        tag = " (critical)" if tr.vehicle_id == scenario.critical_background_id else ""
        sections.append(
            f"Background vehicle {tr.vehicle_id}{tag} history:\n"
            + _state_table(scenario.history(tr), pose)
        )
    labels = "\n".join(f"- {label.display}" for label in library)
    analysis = (
        "Behavior library:\n" + labels + "\n\n" + _FIVE_STEPS + "\n\n" + _EXEMPLARS
    )
    return PromptBundle(
        role=_ROLE,
        task_description=_TASK,
        input_structure="\n\n".join(sections),
        analysis_requirements=analysis,
        rules_for_reference=_RULES_FOR_REFERENCE,
        output_requirements=_OUTPUT_REQUIREMENTS,
    )


# ---------------------------------------------------------------------------
# Verdict rendering and parsing

_VERDICT_RE = re.compile(
    r"^BEHAVIOR:\s*(?P<behavior>.+?)\s*\|\s*RISK:\s*(?P<risk>low|medium|high)\s*\|"
    r"\s*ACCEL:\s*(?P<accel>[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*$"
)


def render_verdict(verdict: AnalyzerVerdict) -> str:
    line = (
        f"BEHAVIOR: {verdict.intent.display} | RISK: {verdict.risk_level} | "
        f"ACCEL: {verdict.y_acc!r}"
    )
    if verdict.rationale:
        return f"{verdict.rationale}\n{line}"
    return line


def is_novel(label: IntentLabel, library) -> bool:
    """True when the label is not within retrieval distance of any library entry."""
    if not library:
        return True
    best = max(label.similarity(entry) for entry in library)
    return (1.0 - best) > NOVELTY_DISTANCE


def parse_verdict(text: str, library=None) -> AnalyzerVerdict:
    """Decode the structured verdict from the final nonempty reply line."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise VerdictParseError("empty reply")
    m = _VERDICT_RE.match(lines[-1].strip())
    if m is None:
        raise VerdictParseError(f"no structured verdict line: {lines[-1].strip()!r}")
    intent = IntentLabel.of(m.group("behavior"))
    rationale = "\n".join(lines[:-1]).strip()
    novel = is_novel(intent, library) if library is not None else False
    return AnalyzerVerdict(
        intent=intent,
        risk_level=m.group("risk"),
        y_acc=float(m.group("accel")),
        rationale=rationale,
        novel=novel,
    )


# ---------------------------------------------------------------------------
# Deterministic rule-based analyzer

_TABLE_ACCEL = {
    "Emergency Braking": -6.0,
    "Close Car-following": -1.0,
    "Aggressive Cut-in": 2.0,
    "Opposite Direction Intrusion": 1.0,
    "Intersection Rush-through Turn Left": 2.5,
    "Intersection Rush-through Go-straight": 2.5,
    "Straight Lane Shift": 1.5,
}


def rule_based_analyze(scenario: scene.Scenario) -> AnalyzerVerdict:
    """Decision-table analyzer over ego-frame geometry; total and deterministic."""
    pose = scenario.ego_pose
    bac = scenario.critical_track
    cur = scenario.current_state(bac)
    dx, dy = scene.to_ego_frame((cur.x, cur.y), pose)
    rel_h = scene.norm_angle(cur.heading - pose.heading)
    aligned = abs(rel_h) < math.pi / 4
    oncoming = abs(rel_h) > 3 * math.pi / 4
    same_lane = abs(dy) <= LANE_WIDTH / 2
    adjacent = LANE_WIDTH / 2 < abs(dy) <= 1.5 * LANE_WIDTH
    cross = scene.paths_cross(scenario, bac)
    bac_lane = scene.nearest_lane(scenario.map, (cur.x, cur.y))

    if aligned and same_lane and 0.0 < dx < 30.0:
        name, risk = "Emergency Braking", "high"
    elif aligned and same_lane and dx <= 0.0:
        name, risk = "Close Car-following", "medium"
    elif aligned and adjacent and -5.0 <= dx <= 15.0:
        name, risk = "Aggressive Cut-in", "high"
    elif oncoming and abs(dy) <= 2 * LANE_WIDTH and cross is None:
        name, risk = "Opposite Direction Intrusion", "medium"
    elif cross is not None and bac_lane is not None and bac_lane.kind == "left_turn":
        name, risk = "Intersection Rush-through Turn Left", "high"
    elif cross is not None:
        name, risk = "Intersection Rush-through Go-straight", "high"
    else:
        name, risk = "Straight Lane Shift", "medium"
    return AnalyzerVerdict(
        intent=IntentLabel.of(name),
        risk_level=risk,
        y_acc=_TABLE_ACCEL[name],
        rationale=f"decision table match at dx={dx:.1f} dy={dy:.1f} rel_h={rel_h:.2f}",
        novel=False,
    )


# ---------------------------------------------------------------------------
# LLM-backed analyzer

_REPAIR_INSTRUCTION = (
    "Your previous reply did not end with the required structured line. Reply "
    "again, ending with exactly: BEHAVIOR: <name> | RISK: <low|medium|high> | "
    "ACCEL: <decimal>"
)


def llm_analyze(
    client,
    scenario: scene.Scenario,
    library,
    model: str = "default",
) -> AnalyzerVerdict:
    """build_prompt -> client -> parse_verdict, with one repair retry."""
    bundle = build_prompt(scenario, library)
    messages = [
        {"role": "system", "content": _ROLE},
        {"role": "user", "content": bundle.rendered},
    ]
    reply = client.complete(llmio.ChatRequest(model=model, messages=tuple(messages)))
    try:
        return parse_verdict(reply.content, library)
    except VerdictParseError:
        first = reply.content
    retry_messages = messages + [
        {"role": "assistant", "content": first},
        {"role": "user", "content": _REPAIR_INSTRUCTION},
    ]
    reply2 = client.complete(llmio.ChatRequest(model=model, messages=tuple(retry_messages)))
    try:
        return parse_verdict(reply2.content, library)
    except VerdictParseError as exc:
        raise AnalysisError(f"unparsable analyzer replies: {exc}", [first, reply2.content])
