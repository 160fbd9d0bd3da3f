"""Entry point and CLI for the slow-fast McKean-Vlasov experiments."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List

from slowfast import ExperimentApp, get_settings, parse_config
from slowfast.config import Settings, describe_schema
from slowfast.errors import ConfigurationError
from slowfast.observability import MetricsRecorder
from slowfast.report_store import create_report_store

ADMIN_COMMANDS = ("stats", "list-reports", "show-report", "delete-report", "schema")


def _load_metrics(path: str | None) -> Dict[str, Any]:
    if not path or not Path(path).exists():
        return {}
    recorder = MetricsRecorder.from_file(path)
    return recorder.snapshot()


def _print_stats(metrics: Dict[str, Any]) -> None:
    if not metrics:
        print("No metrics recorded yet. Run an experiment or set SLOWFAST_METRICS_FILE.", file=sys.stderr)
        return
    print(f"Particle-steps integrated: {metrics.get('particle_steps', 0)}")
    print(f"Blow-ups: {metrics.get('blow_ups', 0)}")
    runs = metrics.get("runs", {})
    if runs:
        print("Runs:")
        for command, stats in sorted(runs.items()):
            print(
                "  - {command}: {count} (failures={failures}, total_duration={duration:.1f}s)".format(
                    command=command,
                    count=stats.get("count", 0),
                    failures=stats.get("failures", 0),
                    duration=stats.get("total_duration", 0.0),
                )
            )
    simulations = metrics.get("simulations", {})
    if simulations:
        print("Simulations:")
        for process, stats in sorted(simulations.items()):
            print(f"  - {process}: {stats.get('count', 0)} ({stats.get('total_duration', 0.0):.1f}s)")
    errors = metrics.get("errors", {})
    if errors:
        print("Errors recorded:")
        for kind, amount in sorted(errors.items()):
            print(f"  - {kind}: {amount}")


def _environment_defaults(settings: Settings) -> List[str]:
    base = [f"run.out={settings.output_dir}", f"run.threads={settings.threads}"]
    if settings.strict:
        base.append("run.strict=true")
    return base


def _flag_overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.strict:
        overrides.append("run.strict=true")
    return overrides


def _admin(args: argparse.Namespace, parser: argparse.ArgumentParser, settings: Settings) -> int:
    out = args.out or settings.output_dir

    if args.command == "stats":
        metrics = _load_metrics(settings.metrics_file_path or str(Path(out) / "metrics.json"))
        if args.json:
            print(json.dumps(metrics, ensure_ascii=False, indent=2))
        else:
            _print_stats(metrics)
        return 0

    if args.command == "list-reports":
        names = list(create_report_store(out).list_reports())
        if not names:
            print("No reports found.")
        for name in names:
            print(name)
        return 0

    if args.command == "show-report":
        if not args.name:
            parser.error("--name is required for show-report")
        try:
            payload = create_report_store(out).load_report(args.name)
        except ConfigurationError as exc:
            print(f"Invalid report name: {exc}", file=sys.stderr)
            return 2
        if payload is None:
            print(f"Report '{args.name}' not found in {out}.", file=sys.stderr)
            return 1
        print(json.dumps(payload, ensure_ascii=False, indent=2))
        return 0

    if args.command == "delete-report":
        if not args.name:
            parser.error("--name is required for delete-report")
        store = create_report_store(out)
        try:
            if store.load_report(args.name) is None:
                print(f"Report '{args.name}' not found in {out}.", file=sys.stderr)
                return 1
            store.delete(args.name)
        except ConfigurationError as exc:
            print(f"Invalid report name: {exc}", file=sys.stderr)
            return 2
        print(f"Report '{args.name}' deleted.")
        return 0

    for key, default, doc in describe_schema():
        print(f"{key} = {default}    # {doc}" if doc else f"{key} = {default}")
    return 0


def main(argv: Iterable[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Averaging and fluctuation experiments for slow-fast McKean-Vlasov systems.")
    parser.add_argument(
        "command",
        choices=ExperimentApp.COMMANDS + ADMIN_COMMANDS,
        help="experiment to run, or an admin command",
    )
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="master seed (run.seed)")
    parser.add_argument("--threads", type=int, help="map-phase threads (run.threads)")
    parser.add_argument("--out", help="output directory (run.out)")
    parser.add_argument("--strict", action="store_true", help="escalate warnings to errors")
    parser.add_argument("--json", action="store_true", help="print JSON (for stats)")
    parser.add_argument("--name", help="report name used by show-report and delete-report")

    args = parser.parse_args(list(argv) if argv is not None else None)
    try:
        settings = get_settings()
    except ConfigurationError as exc:
        print(f"Environment error: {exc}", file=sys.stderr)
        return 2

    if args.command in ADMIN_COMMANDS:
        return _admin(args, parser, settings)

    try:
        config = parse_config(args.config, _flag_overrides(args), base=_environment_defaults(settings))
    except ConfigurationError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return 2
    return ExperimentApp(config, settings).run(args.command)


if __name__ == "__main__":
    sys.exit(main())
