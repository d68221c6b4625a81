"""Command-line entry points: headless runs, comparisons, audits, serving."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .harness import (
    DEFAULT_STEPS,
    compare,
    load_scenario_config,
    privacy_audit,
    run_scenario,
)
from .risk import default_config, load_config_file
from .world import IdMode, SimParams


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exposim",
        description="Deterministic agent-based simulator of decentralized contact tracing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="scenario config file (JSON, SimParams fields)")
        p.add_argument("--risk-config", help="risk configuration file overriding the default")
        p.add_argument("--id-mode", choices=["simplified", "faithful"],
                       help="identifier mode override")
        p.add_argument("--steps", type=int, help="number of simulation steps")

    p_run = sub.add_parser("run", help="run one headless scenario, write metrics CSV")
    add_common(p_run)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", help="CSV output path (default: stdout)")

    p_cmp = sub.add_parser("compare", help="paired with/without-app replicates")
    add_common(p_cmp)
    p_cmp.add_argument("--seeds", type=int, default=20, help="number of paired seeds")
    p_cmp.add_argument("--base-seed", type=int, default=0)
    p_cmp.add_argument("--out", help="JSON output path (default: stdout)")

    p_audit = sub.add_parser("audit", help="run the privacy audit (stalker attack)")
    add_common(p_audit)
    p_audit.add_argument("--seed", type=int, default=0)
    p_audit.add_argument("--target", type=int, default=0, help="agent id the stalker follows")

    p_serve = sub.add_parser("serve", help="serve an interactive steering session")
    add_common(p_serve)
    p_serve.add_argument("--seed", type=int, default=0)
    p_serve.add_argument("--listen", default="127.0.0.1:8765", help="host:port to listen on")
    p_serve.add_argument("--tick-rate", type=float, default=30.0, help="steps per second")

    return parser


def _load_inputs(args) -> tuple[SimParams, int]:
    if args.config:
        params, steps = load_scenario_config(args.config)
    else:
        params, steps = SimParams(), DEFAULT_STEPS
    if args.steps is not None:
        steps = args.steps
    if args.id_mode:
        params = replace(params, id_mode=IdMode(args.id_mode))
    seed = getattr(args, "seed", None)
    if seed is not None:
        params = replace(params, rng_seed=seed)
    return params, steps


def _risk_config(args):
    return load_config_file(args.risk_config) if args.risk_config else default_config()


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            params, steps = _load_inputs(args)
            series, summary = run_scenario(params, steps, _risk_config(args))
            if args.out:
                with open(args.out, "wb") as fh:
                    fh.write(series.to_csv_bytes())
            else:
                sys.stdout.write(series.to_csv())
            print(json.dumps(summary.to_dict(), sort_keys=True), file=sys.stderr)
        elif args.command == "compare":
            params, steps = _load_inputs(args)
            report = compare(params, args.seeds, steps, base_seed=args.base_seed,
                             risk_config=_risk_config(args))
            payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(payload + "\n")
            else:
                print(payload)
        elif args.command == "audit":
            params, steps = _load_inputs(args)
            report = privacy_audit(params, steps=min(steps, 3000), seed=args.seed,
                                   risk_config=_risk_config(args), target_agent_id=args.target)
            print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        elif args.command == "serve":
            from .session import SessionServer

            params, _steps = _load_inputs(args)
            host, _, port = args.listen.rpartition(":")
            server = SessionServer(
                params,
                risk_config=_risk_config(args),
                host=host or "127.0.0.1",
                port=int(port),
                tick_rate=args.tick_rate,
            )
            print(f"serving on {server.host}:{server.port} "
                  f"(tick rate {args.tick_rate} steps/s, Ctrl-C to stop)")
            server.serve_forever()
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
