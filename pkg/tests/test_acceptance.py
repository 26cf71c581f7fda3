"""Acceptance gate: one test per release criterion, one printed line each.

Each test prints "[PASS] criterion N: ..." (or FAIL) to the real stderr so the
lines show up even under pytest capture, then asserts.
"""
import json
import math
import sys
import tempfile
import time

import numpy as np
import pytest

from advscen import (
    analyzer,
    behaviors,
    dsl,
    engine,
    llmio,
    membank,
    metrics,
    planner,
    scene,
    synthetic,
)
from advscen.behaviors import IntentLabel
from advscen.metrics import CollisionConfig
from conftest import LABELED_CASES, campaign_scenarios, random_future
from test_dsl import ENV as DSL_ENV
from test_dsl import MALFORMED, _random_expr
from test_metrics import brute_force_collision, grid_min_ttc

CCONFIG = CollisionConfig()


def _report(num: int, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line, file=sys.__stderr__, flush=True)
    assert ok, line


def _warm_kernels():
    ego = random_future(np.random.default_rng(0), n=5)
    bac = random_future(np.random.default_rng(1), n=5)
    metrics.collision_indicator(ego, bac, CCONFIG)
    metrics.min_ttc(ego, bac, CCONFIG)


def test_criterion_01_collision_predicate_matches_brute_force():
    _warm_kernels()
    rng = np.random.default_rng(101)
    pairs = [(random_future(rng), random_future(rng)) for _ in range(1000)]
    start = time.perf_counter()
    mismatches = 0
    for i, (ego, bac) in enumerate(pairs):
        eps = (0.5, 2.0, 5.0)[i % 3]
        got = metrics.collision_indicator(ego, bac, CollisionConfig(epsilon=eps))
        if got != brute_force_collision(ego, bac, eps):
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5.0
    _report(1, ok, f"1000 pairs, {mismatches} mismatches, {elapsed:.2f} s (< 5 s)")


def test_criterion_02_min_ttc_matches_grid_sweep():
    _warm_kernels()
    rng = np.random.default_rng(202)
    pairs = [(random_future(rng), random_future(rng)) for _ in range(200)]
    start = time.perf_counter()
    worst = 0.0
    absent_agree = 0
    bad = 0
    for ego, bac in pairs:
        got = metrics.min_ttc(ego, bac, CCONFIG)
        want = grid_min_ttc(ego, bac, CCONFIG.epsilon, cap=10.0, step=1e-3)
        if want is None:
            if got is None:
                absent_agree += 1
            elif got <= 10.0 - 0.01:
                bad += 1
        elif got is None or abs(got - want) > 0.01:
            bad += 1
        else:
            worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - start
    ok = bad == 0 and absent_agree > 0 and elapsed < 10.0
    _report(
        2,
        ok,
        f"200 pairs, worst gap {worst:.4f} s (<= 0.01), "
        f"{absent_agree} absent/absent agreements, {elapsed:.2f} s (< 10 s)",
    )


def test_criterion_03_quintic_endpoints_and_equivariance():
    rng = np.random.default_rng(303)
    config = planner.PlannerConfig()
    T = config.steps * config.dt

    def state():
        return planner.BoundaryState(
            x=rng.uniform(-50, 50),
            y=rng.uniform(-50, 50),
            vx=rng.uniform(-15, 15),
            vy=rng.uniform(-15, 15),
            ax=rng.uniform(-3, 3),
            ay=rng.uniform(-3, 3),
        )

    worst_pos = 0.0
    worst_vel = 0.0
    for _ in range(1000):
        start, end = state(), state()
        points = planner.plan_quintic(start, end, config)
        last = points[-1]
        worst_pos = max(worst_pos, math.hypot(last.x - end.x, last.y - end.y))
        cx = planner.quintic_coefficients(start.x, start.vx, start.ax, end.x, end.vx, end.ax, T)
        cy = planner.quintic_coefficients(start.y, start.vy, start.ay, end.y, end.vy, end.ay, T)
        tau = np.array([T])
        vx = float(planner._poly_eval(planner._poly_derivative(cx), tau)[0])
        vy = float(planner._poly_eval(planner._poly_derivative(cy), tau)[0])
        worst_vel = max(worst_vel, math.hypot(vx - end.vx, vy - end.vy))

    worst_xf = 0.0
    for _ in range(50):
        start, end = state(), state()
        theta = rng.uniform(-math.pi, math.pi)
        tx, ty = rng.uniform(-100, 100, size=2)
        c, s = math.cos(theta), math.sin(theta)

        def xf_state(b):
            return planner.BoundaryState(
                x=c * b.x - s * b.y + tx,
                y=s * b.x + c * b.y + ty,
                vx=c * b.vx - s * b.vy,
                vy=s * b.vx + c * b.vy,
                ax=c * b.ax - s * b.ay,
                ay=s * b.ax + c * b.ay,
            )

        base = planner.plan_quintic(start, end, config)
        moved = planner.plan_quintic(xf_state(start), xf_state(end), config)
        for p, q in zip(base, moved):
            ex = c * p.x - s * p.y + tx
            ey = s * p.x + c * p.y + ty
            worst_xf = max(worst_xf, math.hypot(ex - q.x, ey - q.y))

    ok = worst_pos <= 1e-9 and worst_vel <= 1e-6 and worst_xf <= 1e-9
    _report(
        3,
        ok,
        f"1000 boundaries: endpoint pos {worst_pos:.1e} m (<= 1e-9), "
        f"vel {worst_vel:.1e} m/s (<= 1e-6); rigid-transform gap {worst_xf:.1e} (<= 1e-9)",
    )


def test_criterion_04_kl_divergence_oracles():
    rng = np.random.default_rng(404)
    samples = rng.normal(10.0, 2.0, 5000).tolist()
    kl_same = metrics.kl_divergence(samples, samples)
    kl_two_bin = metrics.kl_divergence([0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 1.0], bins=2)
    want = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    ok = kl_same <= 1e-9 and abs(kl_two_bin - 0.1438) <= 1e-3
    _report(
        4,
        ok,
        f"identical {kl_same:.1e} (<= 1e-9); two-bin {kl_two_bin:.4f} "
        f"vs analytic {want:.4f} (+- 1e-3)",
    )


# -- shared campaign run for criteria 5, 6, 10 ------------------------------

_CAMPAIGN_CACHE = {}


def _run_campaign():
    scenarios = campaign_scenarios()
    with tempfile.TemporaryDirectory() as tmp:
        bank = membank.MemoryBank(f"{tmp}/bank.jsonl")
        summary, rows, samples = engine.run_campaign(
            scenarios, analyzer.rule_based_analyze, bank
        )
        bank_bytes = open(bank.store_path, "rb").read()
    raw = [engine.raw_baseline(sc, CCONFIG) for _, sc in scenarios]
    doc = json.dumps(
        {
            "rows": [
                {"scenario_id": r.scenario_id, "error": r.error, "result": r.result.to_doc()}
                for r in rows
            ],
            "summary": summary.__dict__,
        },
        sort_keys=True,
    )
    return summary, rows, raw, doc, bank_bytes


def _campaign():
    if "first" not in _CAMPAIGN_CACHE:
        start = time.perf_counter()
        _CAMPAIGN_CACHE["first"] = _run_campaign()
        _CAMPAIGN_CACHE["elapsed"] = time.perf_counter() - start
    return _CAMPAIGN_CACHE["first"], _CAMPAIGN_CACHE["elapsed"]


def test_criterion_05_campaign_criticality():
    (summary, rows, raw, _, _), elapsed = _campaign()
    raw_rate = sum(1 for em in raw if em.collided) / len(raw)
    raw_finite = [em.min_ttc for em in raw if em.min_ttc is not None]
    raw_mean_ttc = float(np.mean(raw_finite))
    n = len(rows)
    ok = (
        n == 32
        and all(r.error is None for r in rows)
        and all(r.result.iterations_used <= 5 for r in rows)
        and summary.collision_rate >= 0.70
        and summary.mean_min_ttc is not None
        and summary.mean_min_ttc < raw_mean_ttc
        and raw_rate == 0.0
        and elapsed < 60.0
    )
    _report(
        5,
        ok,
        f"{n} scenarios: collision rate {summary.collision_rate:.4f} (>= 0.70), "
        f"mean min TTC {summary.mean_min_ttc:.3f} s vs raw {raw_mean_ttc:.2f} s, "
        f"raw collision rate {raw_rate:.2f} (== 0), {elapsed:.1f} s (< 60 s)",
    )


def test_criterion_06_campaign_realism():
    (summary, _, _, _, _), _ = _campaign()
    ok = summary.abnormal_lat_accel_fraction <= 0.01 and summary.kl_speed <= 0.5
    _report(
        6,
        ok,
        f"abnormal lateral-accel fraction {summary.abnormal_lat_accel_fraction:.4f} "
        f"(<= 0.01), speed KL {summary.kl_speed:.3f} nats (<= 0.5)",
    )


def test_criterion_07_memory_bank_generation_economy(tmp_path):
    scenario_a = synthetic.build_case("adjacent", 101)
    scenario_b = synthetic.build_case("adjacent", 102)
    novel = "Blind-Side High-Speed Merge"
    verdict_line = f"BEHAVIOR: {novel} | RISK: high | ACCEL: 2.0"
    rationale = "A fast merge from the ego's blind side."
    builtin_labels = [spec.label for spec in behaviors.builtin_library()]
    grown_labels = builtin_labels + [IntentLabel.of(novel)]

    fixtures = tmp_path / "fixtures"
    fixtures.mkdir()

    def analyze_request(scenario, library):
        bundle = analyzer.build_prompt(scenario, library)
        return llmio.ChatRequest(
            model="default",
            messages=(
                {"role": "system", "content": analyzer._ROLE},
                {"role": "user", "content": bundle.rendered},
            ),
        )

    reply = f"{rationale}\n{verdict_line}"
    llmio.save_fixture(str(fixtures), analyze_request(scenario_a, builtin_labels), reply)
    llmio.save_fixture(str(fixtures), analyze_request(scenario_b, grown_labels), reply)
    gen_prompt = membank._GENERATION_TEMPLATE.format(label=novel, context=rationale)
    gen_request = llmio.ChatRequest(
        model="default",
        messages=(
            {"role": "system", "content": membank._GENERATION_SYSTEM},
            {"role": "user", "content": gen_prompt},
        ),
    )
    llmio.save_fixture(
        str(fixtures),
        gen_request,
        "X: ego_x + ego_v * T\nY: ego_y\nHEADING: ego_h\nSPEED: ego_v",
    )

    client = llmio.MockClient(str(fixtures))
    bank = membank.MemoryBank(str(tmp_path / "bank.jsonl"))

    def analyze(scenario):
        return analyzer.llm_analyze(client, scenario, bank.labels())

    size_before = bank.size
    result_a = engine.generate_episode(scenario_a, analyze, bank, client=client)
    size_after = bank.size
    result_b = engine.generate_episode(scenario_b, analyze, bank, client=client)

    bank.save()
    loaded = membank.MemoryBank.load(bank.store_path)
    value_identity = loaded.size == bank.size and all(
        a.to_doc() == b.to_doc() for a, b in zip(bank.entries, loaded.entries)
    )
    first_bytes = open(bank.store_path, "rb").read()
    bank.save()
    byte_stable = open(bank.store_path, "rb").read() == first_bytes

    ok = (
        result_a.memory_event == "generated"
        and result_b.memory_event == "hit"
        and size_before == 7
        and size_after == 8
        and bank.size == 8
        and client.calls == 3
        and value_identity
        and byte_stable
    )
    _report(
        7,
        ok,
        f"K {size_before} -> {size_after}, events "
        f"({result_a.memory_event}, {result_b.memory_event}), "
        f"{client.calls} client calls (2 analyses + exactly 1 generation), "
        f"bank reload identical, save byte-stable",
    )


def test_criterion_08_analyzer_accuracy_and_prompt_contract():
    correct = 0
    for case, seed, expected in LABELED_CASES:
        scenario = synthetic.build_case(case, seed)
        verdict = analyzer.rule_based_analyze(scenario)
        if verdict.intent.display == expected:
            correct += 1

    library = [spec.label for spec in behaviors.builtin_library()]
    rendered = analyzer.build_prompt(synthetic.build_case("lead", 1), library).rendered
    lines = rendered.splitlines()
    headers_ok = all(lines.count(h) == 1 for h in analyzer.BLOCK_HEADERS)
    order = [lines.index(h) for h in analyzer.BLOCK_HEADERS if h in lines]
    headers_ok = headers_ok and order == sorted(order) and len(order) == 6

    verdict = analyzer.AnalyzerVerdict(
        intent=IntentLabel.of("Emergency Braking"),
        risk_level="high",
        y_acc=-6.0,
        rationale="lead vehicle at short headway",
    )
    round_trip = analyzer.parse_verdict(analyzer.render_verdict(verdict))
    rt_ok = (
        round_trip.intent == verdict.intent
        and round_trip.risk_level == verdict.risk_level
        and round_trip.y_acc == verdict.y_acc
        and round_trip.rationale == verdict.rationale
    )
    ok = correct == len(LABELED_CASES) and headers_ok and rt_ok
    _report(
        8,
        ok,
        f"labeled accuracy {correct}/{len(LABELED_CASES)}, six prompt headers "
        f"exact and ordered: {headers_ok}, verdict round trip: {rt_ok}",
    )


def test_criterion_09_dsl_fixpoint_and_guards():
    import random

    fixpoint_fail = 0
    for spec in behaviors.builtin_library():
        for text in spec.rule.as_strings().values():
            ast = dsl.parse_rule(text)
            printed = dsl.format_expr(ast)
            if dsl.parse_rule(printed) != ast or dsl.format_expr(dsl.parse_rule(printed)) != printed:
                fixpoint_fail += 1
    rnd = random.Random(909)
    nonfinite = 0
    for _ in range(1000):
        ast = _random_expr(rnd)
        printed = dsl.format_expr(ast)
        if dsl.parse_rule(printed) != ast:
            fixpoint_fail += 1
        try:
            value = dsl.eval_expr(ast, DSL_ENV)
        except dsl.EvalError:
            continue
        if not math.isfinite(value):
            nonfinite += 1
    rejected = 0
    for text in MALFORMED:
        try:
            dsl.parse_rule(text)
        except dsl.ParseError as exc:
            if isinstance(exc.offset, int) and 0 <= exc.offset <= len(text):
                rejected += 1
    ok = fixpoint_fail == 0 and nonfinite == 0 and rejected == len(MALFORMED) == 20
    _report(
        9,
        ok,
        f"print/parse fixpoint on 7 builtins + 1000 random exprs "
        f"({fixpoint_fail} failures), {rejected}/20 malformed rejected with "
        f"positions, {nonfinite} non-finite evals",
    )


def test_criterion_10_offline_bit_reproducibility():
    (_, _, _, doc_first, bank_first), _ = _campaign()
    _, _, _, doc_second, bank_second = _run_campaign()
    scen_a = scene.scenario_to_text(synthetic.synth_scenario("intersection", 5))
    scen_b = scene.scenario_to_text(synthetic.synth_scenario("intersection", 5))
    ok = doc_first == doc_second and bank_first == bank_second and scen_a == scen_b
    _report(
        10,
        ok,
        f"two fresh campaign runs byte-identical (report {len(doc_first)} B, "
        f"bank {len(bank_first)} B), scenario serialization byte-identical; "
        f"no network access used",
    )
