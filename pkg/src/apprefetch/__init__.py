"""Trace-driven simulator and strategy library for edge-cache video prefetching."""

from .config import ExperimentConfig, build_experiment_config, default_experiment_config
from .costs import CostParams, LoadSaturationError, StageCost, stage_cost
from .mdp import EMPTY_ACTION, MdpConfig, PrefetchAction, SystemState, simulate_run
from .metrics import RunLedger, cost_summary, hit_ratio, precision_ratio
from .strategies import LearnParams, offline_solve, replay_train, run_online
from .traces import EpisodeTransitionModel, ServerLoadSeries, WatchTrace

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "build_experiment_config",
    "default_experiment_config",
    "CostParams",
    "LoadSaturationError",
    "StageCost",
    "stage_cost",
    "EMPTY_ACTION",
    "MdpConfig",
    "PrefetchAction",
    "SystemState",
    "simulate_run",
    "RunLedger",
    "cost_summary",
    "hit_ratio",
    "precision_ratio",
    "LearnParams",
    "offline_solve",
    "replay_train",
    "run_online",
    "EpisodeTransitionModel",
    "ServerLoadSeries",
    "WatchTrace",
    "__version__",
]
