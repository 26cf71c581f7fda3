import json

import pytest

from advscen import behaviors, dsl, llmio, membank
from advscen.behaviors import IntentLabel
from advscen.membank import MemoryBank


def _bank(tmp_path, **kwargs):
    return MemoryBank(str(tmp_path / "bank.jsonl"), **kwargs)


def _novel_spec(display="Blind-Side High-Speed Merge"):
    return behaviors.BehaviorSpec(
        label=IntentLabel.of(display),
        rule=behaviors.EndpointRule.parse("x + v * T", "y", "h", "v"),
        accel_range=(-8.0, 3.0),
        applicability="any",
        source="generated",
        provenance="test fixture",
    )


def test_seeded_with_seven_builtins(tmp_path):
    bank = _bank(tmp_path)
    assert bank.size == 7
    assert [e.created_at for e in bank.entries] == list(range(7))


def test_retrieve_hit_increments_use_count(tmp_path):
    bank = _bank(tmp_path)
    hit = bank.retrieve(IntentLabel.of("emergency braking"))
    assert hit is not None
    assert hit.label.display == "Emergency Braking"
    assert hit.use_count == 1
    assert bank.peek(IntentLabel.of("Emergency Braking")).use_count == 1  # peek is pure


def test_retrieve_miss_beyond_threshold(tmp_path):
    bank = _bank(tmp_path)
    assert bank.retrieve(IntentLabel.of("Blind-Side High-Speed Merge")) is None


def test_threshold_boundary(tmp_path):
    # distance to "Emergency Braking" of "emergency braking swerve":
    # jaccard 2/3 -> d = 1/3 <= 0.4 -> hit
    bank = _bank(tmp_path)
    assert bank.retrieve(IntentLabel.of("emergency braking swerve")) is not None
    # "emergency stop now": jaccard 1/4 -> d = 0.75 > 0.4 -> miss
    assert bank.retrieve(IntentLabel.of("emergency stop now")) is None


def test_insert_novel_and_duplicate(tmp_path):
    bank = _bank(tmp_path)
    entry = bank.insert_novel(_novel_spec())
    assert bank.size == 8
    assert entry.created_at == 7
    with pytest.raises(membank.DuplicateEntry):
        bank.insert_novel(_novel_spec("blind side high speed merge"))


def test_save_load_value_identity(tmp_path):
    bank = _bank(tmp_path)
    bank.insert_novel(_novel_spec())
    bank.retrieve(IntentLabel.of("Emergency Braking"))
    bank.mark_verified(IntentLabel.of("Emergency Braking"))
    loaded = MemoryBank.load(bank.store_path)
    assert loaded.ret_threshold == bank.ret_threshold
    assert loaded.size == bank.size
    for a, b in zip(bank.entries, loaded.entries):
        assert a.to_doc() == b.to_doc()


def test_save_byte_deterministic(tmp_path):
    bank = _bank(tmp_path)
    bank.insert_novel(_novel_spec())
    with open(bank.store_path, "rb") as fh:
        first = fh.read()
    bank.save()
    with open(bank.store_path, "rb") as fh:
        assert fh.read() == first


def test_corrupt_store_reports_line(tmp_path):
    bank = _bank(tmp_path)
    bank.save()
    with open(bank.store_path, "a", encoding="utf-8") as fh:
        fh.write("{broken\n")
    with pytest.raises(membank.CorruptStore) as info:
        MemoryBank.load(bank.store_path)
    assert info.value.line_no == 9  # header + 7 builtins + bad line
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(membank.CorruptStore):
        MemoryBank.load(str(path))


class _ScriptedClient:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return llmio.ChatResponse(content=self.replies.pop(0))


GOOD_RULE_REPLY = "X: ego_x + ego_v * T\nY: ego_y\nHEADING: ego_h\nSPEED: ego_v"


def test_generate_planner_parses_reply(tmp_path):
    client = _ScriptedClient([GOOD_RULE_REPLY])
    spec = membank.generate_planner(client, IntentLabel.of("Tail Chase"), "context")
    assert spec.source == "generated"
    assert spec.rule.as_strings()["x"] == "ego_x + ego_v * T"
    assert client.calls == 1


def test_generate_planner_repair_retry():
    client = _ScriptedClient(["sorry, prose only", GOOD_RULE_REPLY])
    spec = membank.generate_planner(client, IntentLabel.of("Tail Chase"), "context")
    assert client.calls == 2
    assert spec.rule.as_strings()["y"] == "ego_y"


def test_generate_planner_gives_up():
    client = _ScriptedClient(["nope", "still nope"])
    with pytest.raises(membank.GenerationError) as info:
        membank.generate_planner(client, IntentLabel.of("Tail Chase"), "context")
    assert info.value.replies == ("nope", "still nope")


def test_generate_planner_self_check_rejects_unsafe_rule():
    client = _ScriptedClient(["X: 1 / (ego_x)\nY: y\nHEADING: h\nSPEED: v"])
    with pytest.raises(membank.GenerationError, match="self-check"):
        membank.generate_planner(client, IntentLabel.of("Tail Chase"), "context")


def test_resolve_planner_hit_then_generated(tmp_path):
    from advscen.analyzer import AnalyzerVerdict

    bank = _bank(tmp_path)
    client = _ScriptedClient([GOOD_RULE_REPLY])
    hit_verdict = AnalyzerVerdict(
        intent=IntentLabel.of("Emergency Braking"), risk_level="high", y_acc=-6.0
    )
    spec, event = membank.resolve_planner(bank, hit_verdict, client)
    assert event == "hit"
    assert client.calls == 0
    novel_verdict = AnalyzerVerdict(
        intent=IntentLabel.of("Blind-Side High-Speed Merge"),
        risk_level="high",
        y_acc=2.0,
        rationale="merging fast",
    )
    spec, event = membank.resolve_planner(bank, novel_verdict, client)
    assert event == "generated"
    assert client.calls == 1
    assert bank.size == 8
    # same intent again: retrieval, no further generation
    spec, event = membank.resolve_planner(bank, novel_verdict, client)
    assert event == "hit"
    assert client.calls == 1
