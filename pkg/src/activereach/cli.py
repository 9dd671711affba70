"""Command line entry points: run experiments, sweep parameters, serve live sessions."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import builtin_scenario_names, load_scenario
from .engine import NumericError
from .experiments import emit_report, run_experiment, run_stability_sweep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activereach",
        description="Free-energy reaching experiments on a simulated arm")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario's experiment protocol")
    run_p.add_argument("scenario",
                       help=f"scenario file (.json/.toml) or builtin: {builtin_scenario_names()}")
    run_p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    run_p.add_argument("--trials", type=int, default=None, help="override trial count")
    run_p.add_argument("--out", default=None, help="output directory for report + traces")
    run_p.add_argument("--format", default="csv,json",
                       help="comma list of csv,json,dat (default csv,json)")

    sweep_p = sub.add_parser("sweep", help="stability sweep over gains and dynamics variance")
    sweep_p.add_argument("scenario")
    sweep_p.add_argument("--out", default=None)

    serve_p = sub.add_parser("serve", help="serve a live session over HTTP/WebSocket")
    serve_p.add_argument("--port", type=int, default=8787)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--scenario", default="live")
    serve_p.add_argument("--static-dir", default=None,
                         help="directory with the web UI bundle to serve at /")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        config = load_scenario(args.scenario)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        if args.trials is not None:
            config = dataclasses.replace(config, trials=args.trials)
        try:
            result = run_experiment(config)
        except NumericError as exc:
            print(f"numeric failure: {exc}", file=sys.stderr)
            return 2
        report = result["report"]
        if args.out:
            written = emit_report(result, args.out, formats=tuple(args.format.split(",")))
            for p in written:
                print(f"wrote {p}")
        print(json.dumps(report.get("criteria", report), indent=2, default=float))
        criteria = report.get("criteria", {})
        return 0 if all(v in (True, None) for v in criteria.values()) else 1

    if args.command == "sweep":
        config = load_scenario(args.scenario)
        result = run_stability_sweep(config)
        if args.out:
            emit_report(result, args.out, formats=("json",))
        print(json.dumps(result["report"]["best"], indent=2, default=float))
        return 0 if result["report"]["best"] is not None else 1

    if args.command == "serve":
        from .service import serve
        config = load_scenario(args.scenario)
        static_dir = Path(args.static_dir) if args.static_dir else None
        serve(config, host=args.host, port=args.port, static_dir=static_dir)
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
