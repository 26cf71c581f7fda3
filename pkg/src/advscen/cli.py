"""Command line entry points.

Exit codes: 0 success (critical episode), 2 input/usage error, 3 budget
exhausted without criticality, 4 missing playback fixture, 5 LLM transport
or other runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import (
    analyzer,
    engine,
    llmio,
    membank,
    metrics,
    scene,
    synthetic,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CRITICAL = 3
EXIT_FIXTURE = 4
EXIT_RUNTIME = 5


class _CliError(RuntimeError):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advscen",
        description="Generate and evaluate adversarial safety-critical driving scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write synthetic scenario files")
    p_synth.add_argument("--kind", choices=("straight", "intersection"), required=True)
    p_synth.add_argument("--count", type=int, default=1)
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--out", required=True, help="output directory")

    p_gen = sub.add_parser("generate", help="generate one adversarial episode")
    _add_run_options(p_gen)
    p_gen.add_argument("--scenario", required=True, help="scenario JSON path")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--trace", action="store_true", help="also write the rollout trace")

    p_batch = sub.add_parser("batch", help="run a campaign over many scenarios")
    _add_run_options(p_batch)
    p_batch.add_argument(
        "--scenario-dir", help="directory of scenario JSON files"
    )
    p_batch.add_argument(
        "--scenario", action="append", default=[], help="scenario JSON path (repeatable)"
    )
    p_batch.add_argument("--out", required=True, help="output directory")

    p_bank = sub.add_parser("bank", help="inspect or reset a memory bank")
    bank_sub = p_bank.add_subparsers(dest="bank_command", required=True)
    p_list = bank_sub.add_parser("list", help="list the entries of a bank store")
    p_list.add_argument("--path", required=True)
    p_inspect = bank_sub.add_parser("inspect", help="print one entry in full")
    p_inspect.add_argument("--path", required=True)
    p_inspect.add_argument("--label", required=True, help="intent label to look up")
    p_clear = bank_sub.add_parser("clear", help="reset the store to the builtin-seeded bank")
    p_clear.add_argument("--path", required=True)
    return parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("rules", "llm", "mock"), default="rules")
    p.add_argument("--bank", help="memory bank store path (default: in-memory builtins)")
    p.add_argument("--fixtures", help="fixture directory for --mode mock")
    p.add_argument("--endpoint-url", help="chat-completions endpoint for --mode llm")
    p.add_argument("--model", default="default")
    p.add_argument("--api-key-env", default="ADVSCEN_API_KEY")
    p.add_argument("--ego", choices=("replay", "reactive"), default="replay")
    p.add_argument("--epsilon", type=float, default=metrics.DEFAULT_EPSILON)
    p.add_argument("--max-iters", type=int, default=5)


def _make_bank(args) -> membank.MemoryBank:
    if args.bank and os.path.exists(args.bank):
        return membank.MemoryBank.load(args.bank)
    return membank.MemoryBank(args.bank or os.devnull)


def _make_runtime(args):
    """(analyze callable factory, generation client or None, collision config)."""
    cconfig = metrics.CollisionConfig(epsilon=args.epsilon)
    if args.mode == "rules":
        return lambda bank: analyzer.rule_based_analyze, None, cconfig
    if args.mode == "mock":
        if not args.fixtures:
            raise _CliError("--mode mock requires --fixtures")
        client = llmio.MockClient(args.fixtures)
    else:
        if not args.endpoint_url:
            raise _CliError("--mode llm requires --endpoint-url")
        config = llmio.ClientConfig(
            endpoint_url=args.endpoint_url,
            model=args.model,
            api_key_env_name=args.api_key_env,
        )
        if not os.environ.get(config.api_key_env_name):
            raise _CliError(
                f"API key environment variable {config.api_key_env_name} is not set"
            )
        client = llmio.WireClient(config)

    def factory(bank):
        def analyze(scenario):
            library = [e.label for e in bank.entries]
            return analyzer.llm_analyze(client, scenario, library, model=args.model)

        return analyze

    return factory, client, cconfig


def _run_config(args):
    factory, client, cconfig = _make_runtime(args)
    bank = _make_bank(args)
    analyze = factory(bank)
    ego_policy = engine.EgoPolicy(kind=args.ego)
    rconfig = engine.RefinementConfig(max_iterations=args.max_iters)
    return analyze, client, cconfig, bank, ego_policy, rconfig


def _write_episode(out_dir: str, scenario_id: str, result: engine.EpisodeResult, trace: bool):
    os.makedirs(out_dir, exist_ok=True)
    doc = result.to_doc()
    doc["scenario_id"] = scenario_id
    with open(os.path.join(out_dir, f"{scenario_id}.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if trace:
        rows = [
            {
                "vehicle_id": "ego",
                "points": [[p.t, p.x, p.y, p.heading, p.speed] for p in result.rollout.ego_future],
            }
        ]
        for vid, fut in sorted(result.rollout.background_futures.items()):
            rows.append(
                {"vehicle_id": vid, "points": [[p.t, p.x, p.y, p.heading, p.speed] for p in fut]}
            )
        with open(
            os.path.join(out_dir, f"{scenario_id}.trace.json"), "w", encoding="utf-8"
        ) as fh:
            json.dump(rows, fh)
            fh.write("\n")


def _write_campaign(out_dir: str, summary, rows, samples) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "episodes.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "scenario_id",
                "intent",
                "risk_level",
                "collided",
                "collision_step",
                "min_ttc",
                "min_separation",
                "iterations_used",
                "memory_event",
                "feasible",
                "critical",
                "error",
            ]
        )
        for row in rows:
            if row.result is None:
                writer.writerow([row.scenario_id] + [""] * 10 + [row.error])
                continue
            em = row.result.metrics
            writer.writerow(
                [
                    row.scenario_id,
                    row.result.verdict.intent.display,
                    row.result.verdict.risk_level,
                    int(em.collided),
                    "" if em.collision_step is None else em.collision_step,
                    "" if em.min_ttc is None else f"{em.min_ttc:.4f}",
                    f"{em.min_separation:.4f}",
                    row.result.iterations_used,
                    row.result.memory_event,
                    int(row.result.feasible),
                    int(row.result.critical),
                    "",
                ]
            )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "mean_min_ttc": summary.mean_min_ttc,
                "finite_ttc_count": summary.finite_ttc_count,
                "collision_rate": summary.collision_rate,
                "kl_speed": summary.kl_speed,
                "kl_accel": summary.kl_accel,
                "abnormal_lat_accel_fraction": summary.abnormal_lat_accel_fraction,
                "episodes": len(rows),
            },
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")
    for name in ("speed", "accel"):
        table = metrics.histogram_table(samples[f"raw_{name}"] + samples[f"gen_{name}"])
        value_range = (table[0][0], table[-1][0])
        raw_t = metrics.histogram_table(samples[f"raw_{name}"], value_range=value_range)
        gen_t = metrics.histogram_table(samples[f"gen_{name}"], value_range=value_range)
        with open(
            os.path.join(out_dir, f"hist_{name}.csv"), "w", newline="", encoding="utf-8"
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "raw_density", "generated_density"])
            for (center, raw_d), (_, gen_d) in zip(raw_t, gen_t):
                writer.writerow([f"{center:.4f}", f"{raw_d:.6f}", f"{gen_d:.6f}"])


def _cmd_synth(args) -> int:
    if args.count < 1:
        raise _CliError("--count must be >= 1")
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise _CliError(f"cannot create output directory: {exc}")
    if not os.access(args.out, os.W_OK):
        raise _CliError(f"output directory not writable: {args.out}")
    written = []
    for seed in range(args.seed, args.seed + args.count):
        scenario = synthetic.synth_scenario(args.kind, seed)
        path = os.path.join(args.out, f"{args.kind}-{seed:03d}.json")
        scene.save_scenario(scenario, path)
        written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


def _load_scenarios(args):
    paths = list(args.scenario)
    if args.scenario_dir:
        if not os.path.isdir(args.scenario_dir):
            raise _CliError(f"not a directory: {args.scenario_dir}")
        paths.extend(
            os.path.join(args.scenario_dir, name)
            for name in sorted(os.listdir(args.scenario_dir))
            if name.endswith(".json")
        )
    if not paths:
        raise _CliError("no scenarios given (use --scenario and/or --scenario-dir)")
    return [
        (os.path.splitext(os.path.basename(path))[0], scene.load_scenario(path))
        for path in paths
    ]


def _cmd_generate(args) -> int:
    analyze, client, cconfig, bank, ego_policy, rconfig = _run_config(args)
    scenario = scene.load_scenario(args.scenario)
    sid = os.path.splitext(os.path.basename(args.scenario))[0]
    result = engine.generate_episode(
        scenario, analyze, bank, client, ego_policy, rconfig, cconfig
    )
    _write_episode(args.out, sid, result, args.trace)
    em = result.metrics
    ttc = "none" if em.min_ttc is None else f"{em.min_ttc:.2f}s"
    print(
        f"{sid}: {result.verdict.intent.display} | collided={em.collided} "
        f"min_ttc={ttc} iterations={result.iterations_used} memory={result.memory_event}"
    )
    return EXIT_OK if result.critical else EXIT_NOT_CRITICAL


def _cmd_batch(args) -> int:
    analyze, client, cconfig, bank, ego_policy, rconfig = _run_config(args)
    pairs = _load_scenarios(args)
    summary, rows, samples = engine.run_campaign(
        pairs, analyze, bank, client, ego_policy, rconfig, cconfig
    )
    _write_campaign(args.out, summary, rows, samples)
    failed = sum(1 for r in rows if r.result is None)
    ttc = "none" if summary.mean_min_ttc is None else f"{summary.mean_min_ttc:.2f}"
    print(
        f"{len(rows)} episodes ({failed} failed) | mean min TTC={ttc} "
        f"collision rate={summary.collision_rate:.2f} kl_speed={summary.kl_speed:.3f} "
        f"kl_accel={summary.kl_accel:.3f}"
    )
    return EXIT_OK


def _load_bank(path: str) -> membank.MemoryBank:
    if not os.path.exists(path):
        raise _CliError(f"no bank store at {path}")
    try:
        return membank.MemoryBank.load(path)
    except membank.BankError as exc:
        raise _CliError(str(exc))


def _cmd_bank(args) -> int:
    if args.bank_command == "clear":
        bank = membank.MemoryBank(args.path)
        bank.save()
        print(f"reset {args.path} to {bank.size} builtin entries")
        return EXIT_OK
    bank = _load_bank(args.path)
    if args.bank_command == "list":
        print(f"K = {bank.size}")
        for entry in bank.entries:
            flags = " verified" if entry.verified else ""
            print(
                f"{entry.created_at:3d}  {entry.label.display}  "
                f"(source={entry.spec.source}, uses={entry.use_count}){flags}"
            )
        return EXIT_OK
    # inspect
    from .behaviors import IntentLabel

    entry = bank.peek(IntentLabel.of(args.label))
    if entry is None:
        raise _CliError(f"no entry within retrieval distance of {args.label!r}")
    print(json.dumps(entry.to_doc(), indent=1, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "generate": _cmd_generate,
    "batch": _cmd_batch,
    "bank": _cmd_bank,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except llmio.MissingFixture as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE
    except (scene.SchemaError, membank.BankError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except llmio.LlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
