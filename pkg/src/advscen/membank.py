"""Dynamic memorization and retrieval of intent -> planner pairs."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Optional

from . import behaviors, dsl, llmio
from .behaviors import BehaviorSpec, IntentLabel

DEFAULT_RET_THRESHOLD = 0.4
_STORE_VERSION = 1


class BankError(RuntimeError):
    pass


class DuplicateEntry(BankError):
    pass


class CorruptStore(BankError):
    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class GenerationError(RuntimeError):
    def __init__(self, message: str, replies=()):
        super().__init__(message)
        self.replies = tuple(replies)


@dataclass
class MemoryEntry:
    label: IntentLabel
    spec: BehaviorSpec
    created_at: int  # logical creation sequence number
    use_count: int = 0
    verified: bool = False

    def __post_init__(self):
        if self.use_count < 0:
            raise ValueError("use_count must be >= 0")
        if self.spec.label != self.label:
            raise ValueError("entry label must match spec label")

    def to_doc(self) -> dict:
        doc = self.spec.to_doc()
        doc.update(
            {"created_at": self.created_at, "use_count": self.use_count, "verified": self.verified}
        )
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "MemoryEntry":
        spec = BehaviorSpec.from_doc(doc)
        return cls(
            label=spec.label,
            spec=spec,
            created_at=int(doc["created_at"]),
            use_count=int(doc["use_count"]),
            verified=bool(doc["verified"]),
        )


def similarity(a: IntentLabel, b: IntentLabel) -> float:
    """Jaccard index over canonical token sets; distance d = 1 - similarity."""
    return a.similarity(b)


class MemoryBank:
    """Ordered intent -> planner store with similarity-gated retrieval.

    Seeded with the seven builtin behaviors at creation; persisted as a
    line-delimited text file written atomically.
    """

    def __init__(
        self,
        store_path: str,
        ret_threshold: float = DEFAULT_RET_THRESHOLD,
        seed_builtins: bool = True,
    ):
        if not (0.0 <= ret_threshold <= 1.0):
            raise ValueError("ret_threshold must lie in [0, 1]")
        self.store_path = store_path
        self.ret_threshold = ret_threshold
        self.entries: list = []
        if seed_builtins:
            for i, spec in enumerate(behaviors.builtin_library()):
                self.entries.append(MemoryEntry(label=spec.label, spec=spec, created_at=i))

    @property
    def size(self) -> int:
        return len(self.entries)

    def labels(self):
        return [e.label for e in self.entries]

    def _best_match(self, query: IntentLabel):
        best = None
        best_d = 2.0
        for entry in self.entries:
            d = 1.0 - similarity(query, entry.label)
            if d < best_d or (d == best_d and best is not None and entry.created_at < best.created_at):
                best = entry
                best_d = d
        return best, best_d

    def retrieve(self, query: IntentLabel) -> Optional[MemoryEntry]:
        """Closest entry when within the retrieval threshold, else None.

        A hit increments the entry's use_count.
        """
        best, best_d = self._best_match(query)
        if best is None or best_d > self.ret_threshold:
            return None
        best.use_count += 1
        return best

    def peek(self, query: IntentLabel) -> Optional[MemoryEntry]:
        """Like retrieve but without touching use_count."""
        best, best_d = self._best_match(query)
        if best is None or best_d > self.ret_threshold:
            return None
        return best

    def insert_novel(self, spec: BehaviorSpec) -> MemoryEntry:
        """Append a novel entry and persist atomically."""
        if self.peek(spec.label) is not None:
            raise DuplicateEntry(f"near-duplicate of {spec.label.display!r} already stored")
        next_seq = max((e.created_at for e in self.entries), default=-1) + 1
        entry = MemoryEntry(label=spec.label, spec=spec, created_at=next_seq)
        self.entries.append(entry)
        self.save()
        return entry

    def mark_verified(self, label: IntentLabel) -> None:
        entry = self.peek(label)
        if entry is not None and not entry.verified:
            entry.verified = True
            self.save()

    # -- persistence --------------------------------------------------------

    def save(self) -> None:
        header = json.dumps(
            {"version": _STORE_VERSION, "ret_threshold": self.ret_threshold},
            sort_keys=True,
            separators=(",", ":"),
        )
        lines = [header]
        for entry in self.entries:
            lines.append(json.dumps(entry.to_doc(), sort_keys=True, separators=(",", ":")))
        directory = os.path.dirname(os.path.abspath(self.store_path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bank-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines))
                fh.write("\n")
            os.replace(tmp, self.store_path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    @classmethod
    def load(cls, store_path: str) -> "MemoryBank":
        with open(store_path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise CorruptStore(store_path, 0, "empty store file")
        try:
            header = json.loads(lines[0])
            threshold = float(header["ret_threshold"])
            version = header["version"]
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptStore(store_path, 1, f"bad header: {exc}") from exc
        if version != _STORE_VERSION:
            raise CorruptStore(store_path, 1, f"unsupported version {version!r}")
        bank = cls(store_path, ret_threshold=threshold, seed_builtins=False)
        for i, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                bank.entries.append(MemoryEntry.from_doc(json.loads(line)))
            except (ValueError, KeyError, TypeError, dsl.DslError) as exc:
                raise CorruptStore(store_path, i, str(exc)) from exc
        return bank


# ---------------------------------------------------------------------------
# LLM-backed planner generation

_GENERATION_SYSTEM = (
    "You are a trajectory-planner author for a driving simulator. You write "
    "endpoint rules in a small arithmetic expression language."
)

_GENERATION_TEMPLATE = """Write endpoint rules for the driving behavior "{label}".

Expression language (no loops, no conditionals):
  operators: + - * / ^ and unary -
  functions: sin(a) cos(a) tan(a) abs(a) sqrt(a) sign(a) min(a,b) max(a,b) clamp(a,lo,hi)
  variables (ego-centered frame, ego at origin heading 0):
    x, y, h, v     current background-vehicle position, heading, speed
    a              assigned longitudinal acceleration (m/s^2)
    T              planning horizon in seconds; t, dt current time and timestep
    ego_x, ego_y, ego_h, ego_v   ego current state (ego_x = ego_y = ego_h = 0)
    lane_w         lane width (m)
    cross_x, cross_y  crossing point of the ego path and the background path

Scenario context:
{context}

Reply with exactly four lines:
X: <expression>
Y: <expression>
HEADING: <expression>
SPEED: <expression>
"""

_GENERATION_REPAIR = (
    "Your previous reply could not be parsed. Reply with exactly four lines "
    "X:, Y:, HEADING:, SPEED:, each followed by one expression in the language "
    "described above."
)


def _parse_generated_rule(text: str) -> behaviors.EndpointRule:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        for key in ("X", "Y", "HEADING", "SPEED"):
            prefix = f"{key}:"
            if line.upper().startswith(prefix):
                fields[key] = line[len(prefix) :].strip()
    missing = [k for k in ("X", "Y", "HEADING", "SPEED") if k not in fields]
    if missing:
        raise dsl.ParseError(f"missing rule line(s): {', '.join(missing)}", 0)
    return behaviors.EndpointRule.parse(
        fields["X"], fields["Y"], fields["HEADING"], fields["SPEED"]
    )


def generate_planner(
    client,
    label: IntentLabel,
    scenario_context: str,
    model: str = "default",
    accel_range=(-8.0, 3.0),
) -> BehaviorSpec:
    """Prompt the client for DSL endpoint rules; self-check before returning."""
    prompt = _GENERATION_TEMPLATE.format(label=label.display, context=scenario_context)
    messages = [
        {"role": "system", "content": _GENERATION_SYSTEM},
        {"role": "user", "content": prompt},
    ]
    reply = client.complete(llmio.ChatRequest(model=model, messages=tuple(messages)))
    replies = [reply.content]
    try:
        rule = _parse_generated_rule(reply.content)
    except dsl.DslError:
        retry = messages + [
            {"role": "assistant", "content": reply.content},
            {"role": "user", "content": _GENERATION_REPAIR},
        ]
        reply2 = client.complete(llmio.ChatRequest(model=model, messages=tuple(retry)))
        replies.append(reply2.content)
        try:
            rule = _parse_generated_rule(reply2.content)
        except dsl.DslError as exc:
            raise GenerationError(f"planner generation failed: {exc}", replies) from exc
    spec = BehaviorSpec(
        label=label,
        rule=rule,
        accel_range=accel_range,
        applicability="any",
        source="generated",
        provenance=f"generated planner for {label.display!r}",
    )
    for name, ast in rule.exprs().items():
        try:
            dsl.eval_expr(ast, behaviors._SELF_CHECK_ENV)
        except dsl.DslError as exc:
            raise GenerationError(
                f"generated rule {name!r} failed self-check: {exc}", replies
            ) from exc
    return spec


def resolve_planner(bank: MemoryBank, verdict, client, model: str = "default"):
    """Retrieve-or-generate per the online loop; returns (spec, event)."""
    hit = bank.retrieve(verdict.intent)
    if hit is not None:
        return hit.spec, "hit"
    context = verdict.rationale or f"risk level {verdict.risk_level}, accel {verdict.y_acc}"
    spec = generate_planner(client, verdict.intent, context, model=model)
    bank.insert_novel(spec)
    return spec, "generated"
