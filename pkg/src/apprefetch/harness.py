"""Experiment orchestration: seeded runs, aggregation and artifact writing.

Seeding scheme: every random stream derives from ``SeedSequence([seed, tag,
...])`` with fixed integer tags per purpose, so any strategy subset sees
byte-identical traces and loads for a given run seed, and reruns reproduce
artifacts exactly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .forecast import mape, rolling_one_step
from .metrics import RunLedger, cost_summary, hit_ratio, precision_ratio
from .strategies import (
    FamilyEvaluation,
    OfflineSolution,
    ReplayResult,
    evaluate_fixed_family,
    evaluate_heuristic_family,
    heuristic_policy,
    offline_solve,
    random_fixed_policy,
    replay_train,
    run_online,
    save_theta,
)
from .mdp import simulate_run
from .traces import (
    ServerLoadSeries,
    WatchTrace,
    default_base_shape,
    generate_server_load,
    generate_watch_trace,
    load_server_load_csv,
    load_watch_trace_csv,
)

__all__ = [
    "RunInputs",
    "StrategySummary",
    "ComparisonReport",
    "make_run_inputs",
    "make_history_inputs",
    "train_online",
    "run_comparison",
    "sweep_lambda1",
    "forecast_eval",
    "case_study",
    "write_comparison",
    "write_sweep",
    "write_forecast",
    "write_case_study",
]

# SeedSequence tags: keep stable, they define reproducibility.
_TAG_RUN = 1
_TAG_HISTORY = 2
_TAG_TRAIN = 3
_TAG_FORECAST = 4

PER_SLOT_HEADER = [
    "slot", "load", "action_size", "startup_delay",
    "cost_total", "cost_m", "cost_q",
]


@dataclass
class RunInputs:
    trace: WatchTrace
    slot_loads: np.ndarray
    session_hours: np.ndarray
    series: ServerLoadSeries


def _rngs(entropy: list[int], n: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(entropy).spawn(n)
    return [np.random.default_rng(c) for c in children]


def _load_series(cfg: ExperimentConfig, rng: np.random.Generator) -> ServerLoadSeries:
    if cfg.load_csv:
        return load_server_load_csv(cfg.load_csv)
    days = -(-cfg.mdp.horizon // cfg.slots_per_day) + 1
    hours = cfg.load_hours or max(24 * days, 168)
    return generate_server_load(
        hours,
        default_base_shape(cfg.costs.l_th),
        cfg.noise_std,
        cfg.weekly_amplitude,
        rng,
    )


def _place_sessions(
    cfg: ExperimentConfig, series: ServerLoadSeries, rng: np.random.Generator
) -> np.ndarray:
    """Absolute hour of each viewing slot; busier hours drawn more often."""
    hours = []
    for t in range(cfg.mdp.horizon):
        day = t // cfg.slots_per_day
        day_slice = series.values[day * 24 : (day + 1) * 24]
        if len(day_slice) < 24:
            raise ValueError(
                f"load series too short: day {day} needs hours up to {(day + 1) * 24}"
            )
        if cfg.placement == "uniform" or day_slice.sum() <= 0:
            hod = int(rng.integers(24))
        else:
            hod = int(rng.choice(24, p=day_slice / day_slice.sum()))
        hours.append(day * 24 + hod)
    hours = np.asarray(hours)
    # Keep hours nondecreasing inside each day so slots advance in time.
    for day in range(0, (cfg.mdp.horizon - 1) // cfg.slots_per_day + 1):
        sel = slice(day * cfg.slots_per_day, (day + 1) * cfg.slots_per_day)
        hours[sel] = np.sort(hours[sel])
    return hours


def _make_trace(
    cfg: ExperimentConfig, rng: np.random.Generator, user_id: str
) -> WatchTrace:
    if cfg.trace_csv:
        trace = load_watch_trace_csv(cfg.trace_csv, cfg.mdp.num_episodes)
        if len(trace) < cfg.mdp.horizon:
            raise ValueError("trace file shorter than the horizon")
        return WatchTrace(
            trace.user_id,
            trace.slots[: cfg.mdp.horizon],
            trace.episodes[: cfg.mdp.horizon],
        )
    if cfg.start_episode:
        start = cfg.start_episode
    else:
        start = int(rng.integers(1, cfg.mdp.num_episodes + 1))
    return generate_watch_trace(
        cfg.transition, cfg.mdp.horizon, start, rng, user_id=user_id
    )


def _inputs_from_entropy(cfg: ExperimentConfig, entropy: list[int], user_id: str) -> RunInputs:
    trace_rng, load_rng, place_rng = _rngs(entropy, 3)
    trace = _make_trace(cfg, trace_rng, user_id)
    series = _load_series(cfg, load_rng)
    hours = _place_sessions(cfg, series, place_rng)
    return RunInputs(trace, series.values[hours], hours, series)


def make_run_inputs(cfg: ExperimentConfig, run_index: int) -> RunInputs:
    return _inputs_from_entropy(
        cfg, [cfg.seed, _TAG_RUN, run_index], user_id=f"user{run_index}"
    )


def make_history_inputs(cfg: ExperimentConfig) -> tuple[list[WatchTrace], list[np.ndarray]]:
    traces, loads = [], []
    for j in range(cfg.replay_traces):
        inputs = _inputs_from_entropy(
            cfg, [cfg.seed, _TAG_HISTORY, j], user_id=f"history{j}"
        )
        traces.append(inputs.trace)
        loads.append(inputs.slot_loads)
    return traces, loads


def train_online(cfg: ExperimentConfig) -> ReplayResult:
    traces, loads = make_history_inputs(cfg)
    (train_rng,) = _rngs([cfg.seed, _TAG_TRAIN], 1)
    return replay_train(traces, loads, cfg.mdp, cfg.costs, cfg.learn, train_rng)


@dataclass
class StrategySummary:
    precision: float
    hit_ratio: float
    total_cost: float
    monetary_cost: float
    qoe_cost: float
    per_slot: np.ndarray  # columns follow PER_SLOT_HEADER


@dataclass
class ComparisonReport:
    seed_base: int
    n_runs: int
    horizon: int
    strategies: dict[str, StrategySummary]
    replay: ReplayResult | None


def _per_slot_matrix(ledger: RunLedger) -> np.ndarray:
    rows = np.empty((len(ledger.records), len(PER_SLOT_HEADER)))
    for i, r in enumerate(ledger.records):
        rows[i] = (
            r.slot, r.load, len(r.prefetched), r.startup_delay,
            r.cost_total, r.cost_monetary, r.cost_qoe,
        )
    return rows


class _Aggregator:
    """Accumulates per-run metrics and per-slot matrices for one strategy."""

    def __init__(self) -> None:
        self.precision: list[float] = []
        self.hit: list[float] = []
        self.total: list[float] = []
        self.monetary: list[float] = []
        self.qoe: list[float] = []
        self._slot_sum: np.ndarray | None = None
        self._slot_n = 0

    def add_ledger(self, ledger: RunLedger) -> None:
        summary = cost_summary(ledger)
        self.precision.append(precision_ratio(ledger))
        self.hit.append(hit_ratio(ledger))
        self.total.append(summary.total)
        self.monetary.append(summary.monetary)
        self.qoe.append(summary.qoe)
        self._add_slots(_per_slot_matrix(ledger))

    def add_family(self, family: FamilyEvaluation) -> None:
        self.precision.append(family.mean_precision())
        self.hit.append(family.mean_hit_ratio())
        self.total.append(family.mean_total_cost())
        self.monetary.append(family.mean_monetary_cost())
        self.qoe.append(family.mean_qoe_cost())
        for ledger in family.ledgers.values():
            self._add_slots(_per_slot_matrix(ledger))

    def _add_slots(self, matrix: np.ndarray) -> None:
        if self._slot_sum is None:
            self._slot_sum = matrix.copy()
        else:
            self._slot_sum += matrix
        self._slot_n += 1

    def summary(self) -> StrategySummary:
        per_slot = self._slot_sum / self._slot_n
        per_slot[:, 0] = np.arange(len(per_slot))  # keep slot column integral
        return StrategySummary(
            precision=float(np.mean(self.precision)),
            hit_ratio=float(np.mean(self.hit)),
            total_cost=float(np.mean(self.total)),
            monetary_cost=float(np.mean(self.monetary)),
            qoe_cost=float(np.mean(self.qoe)),
            per_slot=per_slot,
        )


def run_comparison(cfg: ExperimentConfig) -> ComparisonReport:
    """Evaluate the configured strategies on shared per-seed inputs."""
    replay = train_online(cfg) if "online" in cfg.strategies else None
    aggregators = {name: _Aggregator() for name in cfg.strategies}

    for i in range(cfg.n_runs):
        inputs = make_run_inputs(cfg, i)
        random_rng, heuristic_rng = _rngs([cfg.seed, _TAG_RUN, i, 99], 2)
        for name in cfg.strategies:
            if name == "random":
                aggregators[name].add_family(
                    evaluate_fixed_family(
                        inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs, random_rng
                    )
                )
            elif name == "heuristic":
                aggregators[name].add_family(
                    evaluate_heuristic_family(
                        inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs, heuristic_rng
                    )
                )
            elif name == "offline":
                solution = offline_solve(
                    inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs
                )
                ledger = simulate_run(
                    solution.policy(), inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs
                )
                aggregators[name].add_ledger(ledger)
            elif name == "online":
                ledger, _ = run_online(
                    replay.theta, inputs.trace, inputs.slot_loads,
                    cfg.mdp, cfg.costs, cfg.learn,
                )
                aggregators[name].add_ledger(ledger)

    return ComparisonReport(
        seed_base=cfg.seed,
        n_runs=cfg.n_runs,
        horizon=cfg.mdp.horizon,
        strategies={name: agg.summary() for name, agg in aggregators.items()},
        replay=replay,
    )


def sweep_lambda1(cfg: ExperimentConfig, values) -> list[dict]:
    """Online-strategy cost decomposition per tested QoE weight, shared seeds."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("need at least one weight value")
    if any(v < 0 for v in values):
        raise ValueError("weights must be nonnegative")
    rows = []
    for lam in values:
        sub = replace(cfg, costs=replace(cfg.costs, lambda1=lam), strategies=("online",))
        report = run_comparison(sub)
        online = report.strategies["online"]
        rows.append(
            {
                "lambda1": lam,
                "monetary_cost": online.monetary_cost,
                "qoe_cost": online.qoe_cost,
                "total_cost": online.total_cost,
                "replay_converged": bool(report.replay.converged),
            }
        )
    return rows


@dataclass
class ForecastReport:
    mape: float
    n_points: int
    n_excluded: int
    degenerate_fits: int
    start_index: int
    predictions: np.ndarray
    actuals: np.ndarray


def forecast_eval(cfg: ExperimentConfig) -> ForecastReport:
    """Rolling one-step forecasts over the configured load series."""
    (load_rng,) = _rngs([cfg.seed, _TAG_FORECAST], 1)
    if cfg.load_csv:
        series = load_server_load_csv(cfg.load_csv)
    else:
        hours = cfg.load_hours or 24 * 14
        series = generate_server_load(
            hours,
            default_base_shape(cfg.costs.l_th),
            cfg.noise_std,
            cfg.weekly_amplitude,
            load_rng,
        )
    if len(series) < 72:
        raise ValueError("forecast evaluation needs at least 72 hours of load")
    preds, acts, start, degenerate = rolling_one_step(
        series.values, cfg.forecast_window, cfg.forecast_refit
    )
    excluded = int(np.count_nonzero(acts == 0))
    return ForecastReport(
        mape=mape(preds, acts),
        n_points=len(preds) - excluded,
        n_excluded=excluded,
        degenerate_fits=degenerate,
        start_index=start,
        predictions=preds,
        actuals=acts,
    )


def case_study(cfg: ExperimentConfig, seed: int) -> dict:
    """Single-run slot narrative: load, prefetch count and delay per strategy."""
    sub = replace(cfg, seed=seed)
    inputs = make_run_inputs(sub, 0)
    random_rng, heuristic_rng = _rngs([sub.seed, _TAG_RUN, 0, 99], 2)
    ledgers: dict[str, RunLedger] = {}
    for name in cfg.strategies:
        if name == "random":
            policy = random_fixed_policy(cfg.case_k, cfg.mdp, random_rng)
            ledgers[name] = simulate_run(policy, inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs)
        elif name == "heuristic":
            policy = heuristic_policy(min(cfg.case_k, 3), cfg.mdp, heuristic_rng)
            ledgers[name] = simulate_run(policy, inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs)
        elif name == "offline":
            solution = offline_solve(inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs)
            ledgers[name] = simulate_run(
                solution.policy(), inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs
            )
        elif name == "online":
            replay = train_online(sub)
            ledgers[name], _ = run_online(
                replay.theta, inputs.trace, inputs.slot_loads, cfg.mdp, cfg.costs, cfg.learn
            )
    header = ["slot", "load"]
    for name in cfg.strategies:
        header += [f"{name}_prefetch_count", f"{name}_delay"]
    rows = []
    for t in range(len(inputs.trace)):
        row = [t, float(inputs.slot_loads[t])]
        for name in cfg.strategies:
            record = ledgers[name].records[t]
            row += [len(record.prefetched), record.startup_delay]
        rows.append(row)
    return {"header": header, "rows": rows, "ledgers": ledgers}


# ---------------------------------------------------------------------------
# Artifact writers (deterministic byte output)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_comparison(report: ComparisonReport, outdir, cfg: ExperimentConfig) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    payload = {
        "seed_base": report.seed_base,
        "n_runs": report.n_runs,
        "horizon": report.horizon,
        "strategies": {
            name: {
                "precision": s.precision,
                "hit_ratio": s.hit_ratio,
                "total_cost": s.total_cost,
                "monetary_cost": s.monetary_cost,
                "qoe_cost": s.qoe_cost,
                "n_runs": report.n_runs,
                "seed_base": report.seed_base,
            }
            for name, s in report.strategies.items()
        },
    }
    if report.replay is not None:
        payload["replay"] = {
            "converged": bool(report.replay.converged),
            "sweeps": report.replay.sweeps,
        }
    report_path = os.path.join(outdir, "report.json")
    _write_json(report_path, payload)
    written.append(report_path)
    for name, summary in report.strategies.items():
        path = os.path.join(outdir, f"per_slot_{name}.csv")
        rows = [
            [int(row[0])] + [float(v) for v in row[1:]] for row in summary.per_slot
        ]
        _write_csv(path, PER_SLOT_HEADER, rows)
        written.append(path)
    if report.replay is not None:
        theta_path = os.path.join(outdir, "theta.bin")
        save_theta(theta_path, report.replay.theta, cfg.mdp)
        written.append(theta_path)
    return written


def write_sweep(rows: list[dict], outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "sweep.csv")
    _write_csv(
        csv_path,
        ["lambda1", "monetary_cost", "qoe_cost", "total_cost"],
        [[r["lambda1"], r["monetary_cost"], r["qoe_cost"], r["total_cost"]] for r in rows],
    )
    json_path = os.path.join(outdir, "sweep.json")
    _write_json(json_path, {"rows": rows})
    return [csv_path, json_path]


def write_forecast(report: ForecastReport, outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    json_path = os.path.join(outdir, "forecast.json")
    _write_json(
        json_path,
        {
            "mape_percent": report.mape,
            "n_points": report.n_points,
            "n_excluded": report.n_excluded,
            "degenerate_fits": report.degenerate_fits,
        },
    )
    csv_path = os.path.join(outdir, "forecast.csv")
    rows = [
        [report.start_index + i, float(a), float(p)]
        for i, (p, a) in enumerate(zip(report.predictions, report.actuals))
    ]
    _write_csv(csv_path, ["hour", "actual", "predicted"], rows)
    return [json_path, csv_path]


def write_case_study(case: dict, outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "case_study.csv")
    _write_csv(path, case["header"], case["rows"])
    return [path]
