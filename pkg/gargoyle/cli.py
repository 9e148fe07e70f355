# gargoyle/cli.py
# Command-line entry points.
#
# Usage:
#   python -m gargoyle generate --config fixtures/generator.json --seed 42 --out scenarios.json
#   python -m gargoyle run --scenarios scenarios.json --out report.json [--baseline rbac|fbac|ucon] [--trace trace.jsonl]
#   python -m gargoyle compare --reports gargoyle.json rbac.json ucon.json
#   python -m gargoyle bench --policies-max 900 --users 90 --seed 42
#
# Exit codes: 0 ok, 2 config/schema error, 3 a scenario aborted.

import argparse
import sys

import pandas as pd
import structlog

from gargoyle.config import SEED, load_detector_config, load_generator_config
from gargoyle.errors import ConfigError, GargoyleError
from gargoyle.fbac import load_catalog
from gargoyle.harness import (
    BASELINE_ALIASES, BENCH_REPEATS, aggregate, bench_policy_scaling, compare, run_many, write_report,
    write_trace,
)
from gargoyle.logs import configure_logging
from gargoyle.netsim import load_topology
from gargoyle.policy import load_policies
from gargoyle.scenarios import dump_scenarios, generate_scenarios, load_scenarios

EXIT_CONFIG = 2
EXIT_ABORTED = 3

log = structlog.get_logger(__name__)


def _read(path):
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise ConfigError(f"Could not read {path}: {e}") from e


def cmd_generate(args) -> int:
    config = load_generator_config(args.config)
    specs = generate_scenarios(config, args.seed)
    dump_scenarios(specs, args.out)
    per_cat = {c: sum(1 for s in specs if s.category == c) for c in (1, 2, 3, 4)}
    print(f"Saved {args.out} | scenarios={len(specs)} | by category={per_cat} | seed={args.seed}")
    return 0


def cmd_run(args) -> int:
    specs = load_scenarios(args.scenarios)
    kwargs = {
        "policies": load_policies(args.policies) if args.policies else None,
        "topology": load_topology(_read(args.topology)) if args.topology else None,
        "catalog": load_catalog(_read(args.catalog)) if args.catalog else None,
        "detectors": load_detector_config(args.detectors) if args.detectors else None,
    }
    agent = BASELINE_ALIASES[args.baseline] if args.baseline else "gargoyle"
    outcomes = run_many(specs, agent=agent, jobs=args.jobs, **kwargs)

    others = {}
    if args.with_baselines and not args.baseline:
        for name in ("rbac", "fbac", "ucon"):
            others[name] = run_many(specs, agent=name, jobs=args.jobs, **kwargs)

    report = aggregate(outcomes, others) if outcomes else None
    if report is not None:
        write_report(report, args.out)
    if args.trace:
        write_trace(outcomes, args.trace)

    if report is None:
        print("No scenarios to run.")
        return 0
    counts = " ".join(f"{k}={v}" for k, v in report.counts.items() if v)
    print(f"Saved {args.out} | agent={agent} | scenarios={report.scenarios} | requests={report.requests} | {counts}")
    print(f"Protected: {report.protected} | mean decision {report.latency.mean_ms:.3f} ms")
    if report.aborted:
        print(f"[warn] {len(report.aborted)} scenario(s) aborted: {', '.join(report.aborted[:10])}", file=sys.stderr)
        return EXIT_ABORTED
    return 0


def cmd_compare(args) -> int:
    table = compare(args.reports)
    with pd.option_context("display.max_columns", None, "display.width", 200):
        print(table.to_string())
    return 0


def cmd_bench(args) -> int:
    counts = list(range(0, args.policies_max + 1, args.step))
    users = sorted({u for u in (10, args.users // 3, args.users) if u > 0})
    table = bench_policy_scaling(counts, users, args.seed, args.repeats)
    if args.out:
        table.to_csv(args.out, index=False)
        print(f"Saved {args.out} with {len(table)} cells.")
    print(table.to_string(index=False, float_format=lambda x: f"{x:.3f}"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gargoyle", description="Network-context-aware access control simulator.")
    ap.add_argument("--log-level", default="WARNING", help="structlog level (default: WARNING)")
    ap.add_argument("--log-json", action="store_true", help="Emit logs as JSON lines.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="Generate insider scenarios.")
    g.add_argument("--config", default=None, help="Generator config JSON (default: built-in defaults)")
    g.add_argument("--seed", type=int, default=SEED)
    g.add_argument("--out", default="scenarios.json")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="Replay scenarios and write a report.")
    r.add_argument("--scenarios", required=True)
    r.add_argument("--out", default="report.json")
    r.add_argument("--topology", default=None, help="Override every scenario's org map with this topology.")
    r.add_argument("--policies", default=None, help="Policy pack (default: fixtures/policies.json)")
    r.add_argument("--catalog", default=None, help="Object catalog (default: fixtures/catalog.json)")
    r.add_argument("--detectors", default=None, help="Detector config JSON")
    r.add_argument("--baseline", choices=sorted(BASELINE_ALIASES), default=None)
    r.add_argument("--with-baselines", action="store_true", help="Also run rbac, fbac and ucon for comparison.")
    r.add_argument("--trace", default=None, help="Write the decision trace as JSONL.")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="Tabulate several reports.")
    c.add_argument("--reports", nargs="+", required=True)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench", help="Decision latency vs. number of active policies.")
    b.add_argument("--policies-max", type=int, default=900)
    b.add_argument("--step", type=int, default=100)
    b.add_argument("--users", type=int, default=90)
    b.add_argument("--repeats", type=int, default=BENCH_REPEATS)
    b.add_argument("--seed", type=int, default=SEED)
    b.add_argument("--out", default=None, help="Optional CSV path for the latency table.")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    try:
        return args.func(args)
    except GargoyleError as e:
        # scenario-level failures are caught by the harness; anything here is a bad input file
        log.error("bad_input", error=str(e), kind=type(e).__name__)
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:
        if not isinstance(e.code, str):
            raise
        log.error("bad_input", error=e.code)
        print(f"[error] {e.code}", file=sys.stderr)
        return EXIT_CONFIG
