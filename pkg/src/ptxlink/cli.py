"""Command-line scenario runner.

Exit codes follow the CI contract: 0 success, 1 threshold breach or replay
mismatch, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .config import Config, ConfigError, load_config, resolve_seed
from .experiment import (
    IncompatibleReports,
    PayloadModel,
    compare_reports,
    load_report,
    replay_trace,
    run_experiment,
)
from .metrics import TRANSMISSION_LATENCY_MS, summarize
from .jumphost import OperatorRegistry
from .robot import load_route, load_world
from .aggregation import load_rules
from .teleop import DEFAULT_TOKEN, run_teleop_session, verify_zero_bypass

EXIT_OK = 0
EXIT_BREACH = 1
EXIT_CONFIG = 2

CALIBRATION_TOLERANCE = 0.05


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptxlink",
        description="Deterministic communication testbed for offshore platform operations",
    )
    parser.add_argument("--version", action="version", version=f"ptxlink {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment, teleop session, or trace replay")
    run.add_argument("--scenario", default="setup3", help="topology preset (setup1..setup4)")
    run.add_argument("--network", default="5g_sa", help="link profile: lte, 5g-nsa, 5g-sa, ...")
    run.add_argument("--deployment", default="kubernetes",
                     help="processing profile: function, docker/container, kubernetes/orchestrated")
    run.add_argument("--samples", type=int, default=1760, help="number of transfers or commands")
    run.add_argument("--seed", type=int, default=None, help="RNG seed (PTXLINK_SEED overrides config)")
    run.add_argument("--mode", choices=("experiment", "teleop", "replay"), default="experiment")
    run.add_argument("--replay", metavar="TRACE", default=None,
                     help="re-execute a recorded trace and verify determinism")
    run.add_argument("--config", default=None, help="JSON config overriding built-in profiles")
    run.add_argument("--out", default=None, help="report JSON path")
    run.add_argument("--trace", default=None, help="write the delivery trace (JSON lines)")
    run.add_argument("--samples-csv", default=None, help="write raw metric samples as CSV")
    run.add_argument("--route", default=None, help="waypoint route file (teleop mode)")
    run.add_argument("--world", default=None, help="obstacle world file (teleop mode)")
    run.add_argument("--rules", default=None, help="anomaly rule file (teleop mode)")
    run.add_argument("--registry", default=None, help="operator registry JSON (teleop mode)")
    run.add_argument("--audit-out", default=None, help="audit log export path (teleop mode)")
    run.add_argument("--check", action="store_true",
                     help="CI mode: exit 1 when calibrated medians drift beyond 5%%")

    cmp_p = sub.add_parser("compare", help="diff two experiment reports")
    cmp_p.add_argument("report_a")
    cmp_p.add_argument("report_b")

    serve = sub.add_parser("serve", help="start the control-room gateway (websocket + sockets)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8787)
    serve.add_argument("--registry", default=None, help="operator registry JSON")
    serve.add_argument("--config", default=None)
    serve.add_argument("--seed", type=int, default=None)
    return parser


def _load_scenario_files(args) -> tuple:
    """Referenced files must exist and parse before anything runs."""
    route = load_route(args.route) if args.route else None
    world = load_world(args.world) if args.world else None
    rules = load_rules(args.rules) if args.rules else None
    registry = OperatorRegistry.from_file(args.registry) if args.registry else None
    return route, world, rules, registry


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.replay is not None or args.mode == "replay":
        trace_path = args.replay
        if trace_path is None:
            print("config error: replay mode needs --replay TRACE", file=sys.stderr)
            return EXIT_CONFIG
        if not os.path.exists(trace_path):
            print(f"config error: trace file not found: {trace_path}", file=sys.stderr)
            return EXIT_CONFIG
        ok, message = replay_trace(trace_path, config)
        print(("replay ok: " if ok else "replay FAILED: ") + message)
        return EXIT_OK if ok else EXIT_BREACH

    try:
        seed = resolve_seed(args.seed, config.raw.get("seed"))
        route, world, rules, registry = _load_scenario_files(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    preset = args.scenario.capitalize().replace("setup", "Setup")

    if args.mode == "teleop":
        return _run_teleop(args, config, preset, seed, registry, route, world, rules)

    try:
        report = run_experiment(
            config,
            network=args.network,
            deployment=args.deployment,
            n=args.samples,
            seed=seed,
            scenario=preset,
            keep_trace=args.trace is not None,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    box = report.box_stats[TRANSMISSION_LATENCY_MS]
    print(f"network={report.spec['network']} deployment={report.spec['deployment']} "
          f"n={report.spec['n']} seed={seed}")
    print(f"transmission median {box.median:.2f} ms (q1 {box.q1:.2f}, q3 {box.q3:.2f})")
    if "processing_ms" in report.box_stats:
        print(f"processing mean {report.box_stats['processing_ms'].mean:.2f} ms")
    print(f"PER {report.per:.4f}  PDR {report.pdr:.4f}  dropped {report.dropped_transfers}")

    if args.out:
        report.write(args.out, samples_path=args.samples_csv)
        print(f"report written to {args.out}")
    elif args.samples_csv:
        report.samples.write_csv(args.samples_csv)
    if args.trace:
        report.write_trace(args.trace)
        print(f"trace written to {args.trace}")

    if args.check:
        profile = config.profile(args.network)
        if profile.transfer_target_ms is not None:
            target = profile.transfer_target_ms * config.deployment(args.deployment).link_load_factor
            drift = abs(box.median - target) / target
            if drift > CALIBRATION_TOLERANCE:
                print(f"CHECK FAILED: median {box.median:.2f} ms drifts "
                      f"{drift * 100:.1f}% from target {target:.1f} ms", file=sys.stderr)
                return EXIT_BREACH
            print(f"check ok: median within {drift * 100:.1f}% of target {target:.1f} ms")
    return EXIT_OK


def _run_teleop(args, config: Config, preset: str, seed: int, registry,
                route=None, world=None, rules=None) -> int:
    result = run_teleop_session(
        config, preset=preset, seed=seed, n_commands=args.samples,
        token=DEFAULT_TOKEN, registry=registry,
        route=route, world=world, rules=rules,
    )
    stats = summarize(result.rtt_ms) if result.rtt_ms else None
    print(f"teleop session: {len(result.rtt_ms)} commands confirmed, "
          f"{sum(1 for e in result.echoes if e.status == 'rejected')} rejected")
    if stats:
        print(f"command rtt mean {stats.mean:.2f} ms, median {stats.median:.2f} ms")
    if result.alarms:
        print(f"alarms raised: {len(result.alarms)}")
    ok, detail = verify_zero_bypass(result)
    print(f"zero-bypass audit: {'ok' if ok else 'VIOLATION'} ({detail})")
    if args.audit_out:
        result.audit.write_jsonl(args.audit_out)
        print(f"audit log written to {args.audit_out}")
    if args.out:
        doc = {
            "mode": "teleop",
            "preset": preset,
            "seed": seed,
            "commands": len(result.echoes),
            "confirmed": len(result.rtt_ms),
            "rtt_ms": stats.as_dict() if stats else None,
            "zero_bypass": ok,
            "accounting": result.accounting.as_dict(),
            "ingested_records": result.ingested_records,
            "alarms": len(result.alarms or []),
        }
        with open(args.out, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
        print(f"report written to {args.out}")
    return EXIT_OK if ok else EXIT_BREACH


def cmd_compare(args) -> int:
    try:
        a = load_report(args.report_a)
        b = load_report(args.report_b)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        diff = compare_reports(a, b)
    except IncompatibleReports as exc:
        print(f"incompatible reports: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"A: {diff['network_a']}/{diff['deployment_a']}   "
          f"B: {diff['network_b']}/{diff['deployment_b']}")
    print(f"{'metric':<28}{'A median':>12}{'B median':>12}{'delta':>12}{'ratio':>8}")
    for kind, row in diff["metrics"].items():
        print(f"{kind:<28}{row['median_a']:>12.2f}{row['median_b']:>12.2f}"
              f"{row['delta']:>12.2f}{row['ratio']:>8.3f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        config = load_config(args.config)
        registry = OperatorRegistry.from_file(args.registry) if args.registry else None
        seed = resolve_seed(args.seed)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .gateway import serve

    serve(host=args.host, port=args.port, config=config, registry=registry, seed=seed)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "compare":
        return cmd_compare(args)
    if args.command == "serve":
        return cmd_serve(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
