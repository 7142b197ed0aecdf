"""Experiment configuration: dataclass bundle plus a flat key=value file format."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from .costs import CostParams
from .mdp import MdpConfig
from .strategies import LearnParams
from .traces import DEFAULT_FORWARD3_SPLIT, EpisodeTransitionModel

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "KNOWN_STRATEGIES",
    "parse_config_file",
    "build_experiment_config",
    "default_experiment_config",
]

KNOWN_STRATEGIES = ("random", "heuristic", "offline", "online")
PLACEMENTS = ("load_weighted", "uniform")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    mdp: MdpConfig
    costs: CostParams
    learn: LearnParams
    transition: EpisodeTransitionModel
    n_runs: int = 100
    seed: int = 42
    strategies: tuple[str, ...] = KNOWN_STRATEGIES
    outdir: str = "out"
    # Synthetic load generation and session placement.
    noise_std: float = 0.02
    weekly_amplitude: float = 0.05
    load_hours: int = 0  # 0 = sized automatically from the horizon
    slots_per_day: int = 3
    placement: str = "load_weighted"
    start_episode: int = 0  # 0 = drawn uniformly per run
    # Online training and reporting knobs.
    replay_traces: int = 150
    case_k: int = 2
    forecast_window: int = 48
    forecast_refit: int = 24
    # Optional external inputs.
    trace_csv: str | None = None
    load_csv: str | None = None

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if not self.strategies:
            raise ConfigError("strategy list must be nonempty")
        for s in self.strategies:
            if s not in KNOWN_STRATEGIES:
                raise ConfigError(
                    f"unknown strategy {s!r}; expected one of {KNOWN_STRATEGIES}"
                )
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}")
        if self.slots_per_day < 1:
            raise ConfigError("slots_per_day must be >= 1")
        if self.replay_traces < 1:
            raise ConfigError("replay_traces must be >= 1")
        if self.start_episode < 0 or self.start_episode > self.mdp.num_episodes:
            raise ConfigError("start_episode must be 0 (random) or a valid episode")
        if not 0 <= self.case_k <= self.mdp.prefetch_cap:
            raise ConfigError("case_k must lie within the prefetch cap")


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes"):
        return True
    if lowered in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_split(raw: str) -> tuple[float, float, float]:
    parts = [float(p) for p in raw.split(",")]
    if len(parts) != 3:
        raise ValueError("forward3_split needs exactly 3 comma-separated shares")
    total = sum(parts)
    if total <= 0:
        raise ValueError("forward3_split shares must have positive sum")
    return tuple(p / total for p in parts)


def _parse_strategies(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


# key -> (caster, default); defaults mirror the desk-scale experiment setup.
_SCHEMA: dict[str, tuple] = {
    "episodes": (int, 30),
    "horizon": (int, 30),
    "cache_lifetime": (int, 3),
    "prefetch_cap": (int, 3),
    "p_same": (float, 0.35),
    "p_forward3": (float, 0.47),
    "p_far": (float, 0.18),
    "forward3_split": (_parse_split, DEFAULT_FORWARD3_SPLIT),
    "start_episode": (int, 0),
    "l_th": (float, 1.0),
    "beta": (float, 0.16),
    "kappa": (float, 6e-5),
    "d0": (float, 0.05),
    "d1_scale": (float, 2.0),
    "lambda1": (float, 0.9),
    "lambda2": (float, 0.02),
    "alpha": (float, 0.5),
    "gamma": (float, 0.99),
    "epsilon0": (float, 0.5),
    "epsilon_decay": (float, 5e-4),
    "chi": (float, 1e-4),
    "sweep_cap": (int, 500),
    "divergence_bound": (float, 1e6),
    "n_runs": (int, 100),
    "seed": (int, 42),
    "strategies": (_parse_strategies, KNOWN_STRATEGIES),
    "out": (str, "out"),
    "noise_std": (float, 0.02),
    "weekly_amplitude": (float, 0.05),
    "load_hours": (int, 0),
    "slots_per_day": (int, 3),
    "placement": (str, "load_weighted"),
    "replay_traces": (int, 150),
    "case_k": (int, 2),
    "forecast_window": (int, 48),
    "forecast_refit": (int, 24),
    "trace_csv": (str, None),
    "load_csv": (str, None),
}


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = raw.strip()
    return values


def build_experiment_config(values: Mapping[str, str]) -> ExperimentConfig:
    """Materialize a config from raw string values; unknown keys are errors."""
    unknown = sorted(set(values) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    parsed = {}
    for key, (caster, default) in _SCHEMA.items():
        if key in values:
            try:
                parsed[key] = caster(values[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            parsed[key] = default

    try:
        mdp = MdpConfig(
            num_episodes=parsed["episodes"],
            cache_lifetime=parsed["cache_lifetime"],
            prefetch_cap=parsed["prefetch_cap"],
            horizon=parsed["horizon"],
        )
        costs = CostParams(
            l_th=parsed["l_th"],
            beta=parsed["beta"],
            kappa=parsed["kappa"],
            d0=parsed["d0"],
            d1_scale=parsed["d1_scale"],
            lambda1=parsed["lambda1"],
            lambda2=parsed["lambda2"],
        )
        learn = LearnParams(
            alpha=parsed["alpha"],
            gamma=parsed["gamma"],
            epsilon0=parsed["epsilon0"],
            epsilon_decay=parsed["epsilon_decay"],
            chi=parsed["chi"],
            sweep_cap=parsed["sweep_cap"],
            divergence_bound=parsed["divergence_bound"],
        )
        transition = EpisodeTransitionModel(
            num_episodes=parsed["episodes"],
            p_same=parsed["p_same"],
            p_forward3=parsed["p_forward3"],
            p_far=parsed["p_far"],
            forward3_split=parsed["forward3_split"],
        )
        return ExperimentConfig(
            mdp=mdp,
            costs=costs,
            learn=learn,
            transition=transition,
            n_runs=parsed["n_runs"],
            seed=parsed["seed"],
            strategies=parsed["strategies"],
            outdir=parsed["out"],
            noise_std=parsed["noise_std"],
            weekly_amplitude=parsed["weekly_amplitude"],
            load_hours=parsed["load_hours"],
            slots_per_day=parsed["slots_per_day"],
            placement=parsed["placement"],
            start_episode=parsed["start_episode"],
            replay_traces=parsed["replay_traces"],
            case_k=parsed["case_k"],
            forecast_window=parsed["forecast_window"],
            forecast_refit=parsed["forecast_refit"],
            trace_csv=parsed["trace_csv"],
            load_csv=parsed["load_csv"],
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def default_experiment_config(**overrides) -> ExperimentConfig:
    """Desk-scale defaults; keyword overrides use config-file keys."""
    values = {k: v for k, v in overrides.items()}
    for key in values:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
    cfg = build_experiment_config({})
    if not values:
        return cfg
    # Route overrides through the same casting path as file values.
    raw = {}
    for key, value in values.items():
        if isinstance(value, (tuple, list)):
            raw[key] = ",".join(str(v) for v in value)
        else:
            raw[key] = str(value)
    return build_experiment_config(raw)
