"""Command-line entry point for the simulator and its experiment harness."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, build_experiment_config, parse_config_file
from .harness import (
    case_study,
    forecast_eval,
    run_comparison,
    sweep_lambda1,
    write_case_study,
    write_comparison,
    write_forecast,
    write_sweep,
    _rngs,
    _load_series,
)
from .traces import (
    TraceValidationError,
    CsvFormatError,
    generate_watch_trace,
    save_server_load_csv,
    save_watch_trace_csv,
)

__all__ = ["main"]


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override the base seed")
    parser.add_argument("--runs", type=int, help="override the run count")
    parser.add_argument("--out", help="output directory (or file for gen-*)")
    parser.add_argument("--strategies", help="comma list, e.g. random,offline")


def _load_config(args):
    values = parse_config_file(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.runs is not None:
        values["n_runs"] = str(args.runs)
    if args.out is not None:
        values["out"] = args.out
    if args.strategies is not None:
        values["strategies"] = args.strategies
    return build_experiment_config(values)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apprefetch",
        description="Trace-driven simulator for edge-cache video prefetching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="compare the configured strategies")
    _common_flags(p)

    p = sub.add_parser("sweep", help="sweep the QoE weight for the online strategy")
    _common_flags(p)
    p.add_argument(
        "--lambda1",
        default="0,0.3,0.6,0.9",
        help="comma list of weights to test",
    )

    p = sub.add_parser("forecast", help="rolling one-step load-forecast evaluation")
    _common_flags(p)

    p = sub.add_parser("case", help="single-run per-slot narrative")
    _common_flags(p)

    p = sub.add_parser("gen-trace", help="emit a synthetic watch-trace CSV")
    _common_flags(p)
    p.add_argument("--length", type=int, help="trace length (default: horizon)")

    p = sub.add_parser("gen-load", help="emit a synthetic server-load CSV")
    _common_flags(p)
    p.add_argument("--hours", type=int, help="series length in hours")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "simulate":
            report = run_comparison(cfg)
            written = write_comparison(report, cfg.outdir, cfg)
        elif args.command == "sweep":
            values = [float(v) for v in args.lambda1.split(",") if v.strip()]
            rows = sweep_lambda1(cfg, values)
            written = write_sweep(rows, cfg.outdir)
        elif args.command == "forecast":
            report = forecast_eval(cfg)
            written = write_forecast(report, cfg.outdir)
            print(f"MAPE: {report.mape:.2f}% over {report.n_points} points")
        elif args.command == "case":
            case = case_study(cfg, cfg.seed)
            written = write_case_study(case, cfg.outdir)
        elif args.command == "gen-trace":
            out = args.out or "trace.csv"
            (rng,) = _rngs([cfg.seed, 10], 1)
            length = args.length or cfg.mdp.horizon
            start = cfg.start_episode or int(rng.integers(1, cfg.mdp.num_episodes + 1))
            trace = generate_watch_trace(cfg.transition, length, start, rng)
            save_watch_trace_csv(out, trace)
            written = [out]
        elif args.command == "gen-load":
            out = args.out or "load.csv"
            (rng,) = _rngs([cfg.seed, 11], 1)
            sub_cfg = cfg if args.hours is None else _with_hours(cfg, args.hours)
            series = _load_series(sub_cfg, rng)
            save_server_load_csv(out, series)
            written = [out]
        else:  # pragma: no cover
            parser.error(f"unknown command {args.command}")
    except (ConfigError, TraceValidationError, CsvFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


def _with_hours(cfg, hours: int):
    from dataclasses import replace

    return replace(cfg, load_hours=hours)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
