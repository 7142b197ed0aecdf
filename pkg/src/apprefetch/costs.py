"""Monetary and QoE cost functions and the per-slot stage cost."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .mdp import PrefetchAction, SystemState

__all__ = [
    "LoadSaturationError",
    "CostParams",
    "StageCost",
    "barrier",
    "transmission_cost",
    "storage_cost",
    "latency_cost",
    "competition_cost",
    "stage_terms",
    "stage_cost",
    "calibrate_beta",
]

logger = logging.getLogger(__name__)

# Effective-load ceiling used only for the forced download of a missed item at
# saturated load: the download cannot be declined, so its penalty is evaluated
# just below the threshold instead of diverging.
MISS_LOAD_CAP = 0.999


class LoadSaturationError(ValueError):
    """Load at or above threshold: prefetching is inadmissible here."""


@dataclass(frozen=True)
class CostParams:
    """Constants of the cost model.

    ``d1_scale`` parameterizes the server startup delay as
    ``d1_scale * min(load, l_th) / l_th`` seconds; values below ``d0`` are
    clamped up to ``d0`` so the latency cost stays nonnegative.  ``bandwidth``
    is carried for completeness only; it cancels in the competition cost.
    """

    l_th: float
    beta: float = 0.16
    kappa: float = 6e-5
    d0: float = 0.05
    d1_scale: float = 2.0
    lambda1: float = 0.9
    lambda2: float = 0.02
    bandwidth: float = 1.0

    def __post_init__(self) -> None:
        if self.l_th <= 0:
            raise ValueError("l_th must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.kappa < 0 or self.d0 < 0 or self.lambda1 < 0:
            raise ValueError("kappa, d0 and lambda1 must be nonnegative")
        if not 0 <= self.lambda2 < 1:
            raise ValueError("lambda2 must lie in [0, 1)")

    def server_delay(self, load: float) -> float:
        """Startup delay for a server download, clamped to at least d0."""
        d1 = self.d1_scale * min(load, self.l_th) / self.l_th
        if d1 < self.d0:
            logger.debug("server delay %.4f clamped up to d0=%.4f", d1, self.d0)
            return self.d0
        return d1


class StageCost(NamedTuple):
    total: float
    monetary: float
    qoe: float


def barrier(load: float, l_th: float) -> float:
    """Load penalty -log(1 - load/l_th); diverges toward the threshold."""
    if load < 0:
        raise ValueError("load must be nonnegative")
    if load >= l_th:
        raise LoadSaturationError(f"load {load} at or above threshold {l_th}")
    return -math.log1p(-load / l_th)


def transmission_cost(x: int, load: float, params: CostParams) -> float:
    """Cost of downloading x items at the given load; zero transfers are free."""
    if x < 0:
        raise ValueError("item count must be nonnegative")
    if x == 0:
        return 0.0
    return params.beta * barrier(load, params.l_th) * x


def storage_cost(x: int, params: CostParams) -> float:
    if x < 0:
        raise ValueError("item count must be nonnegative")
    return params.kappa * x


def latency_cost(x: int, load: float, params: CostParams) -> float:
    """Extra startup delay incurred by x cache misses served from the server."""
    if x < 0:
        raise ValueError("item count must be nonnegative")
    if x == 0:
        return 0.0
    return (params.server_delay(load) - params.d0) * x


def competition_cost(x: int, y: int) -> float:
    """Downlink-sharing penalty: zero unless both prefetching and a miss occur."""
    if x < 0:
        raise ValueError("prefetch count must be nonnegative")
    if y not in (0, 1):
        raise ValueError("miss flag must be 0 or 1")
    if x == 0 or y == 0:
        return 0.0
    return math.log(x + y)


def stage_terms(
    prefetch_count: int,
    miss: int,
    stored_count: int,
    load: float,
    psi: float,
    params: CostParams,
) -> StageCost:
    """Assemble the stage cost from a precomputed barrier value.

    Shared by ``stage_cost`` and the offline solver so both produce
    bit-identical sums.
    """
    c_tr = params.beta * psi * prefetch_count
    if miss:
        miss_load = min(load, MISS_LOAD_CAP * params.l_th)
        if miss_load != load:
            logger.debug("miss download at saturated load %.4f capped", load)
        c_tr += params.beta * barrier(miss_load, params.l_th)
    monetary = c_tr + params.kappa * stored_count
    qoe = latency_cost(miss, load, params) + params.lambda2 * competition_cost(
        prefetch_count, miss
    )
    return StageCost(monetary + params.lambda1 * qoe, monetary, qoe)


def stage_cost(
    state: "SystemState",
    action: "PrefetchAction",
    load: float,
    params: CostParams,
) -> StageCost:
    """Per-slot cost of taking ``action`` in ``state`` at the given load.

    Raises LoadSaturationError when the action prefetches at or above the
    threshold load; the empty action is always admissible.
    """
    cached = state.cached_episodes()
    miss = 0 if state.watched in cached else 1
    x = len(action.prefetch)
    psi = barrier(load, params.l_th) if x > 0 else 0.0
    stored = len(cached | set(action.prefetch))
    return stage_terms(x, miss, stored, load, psi, params)


def calibrate_beta(loads, l_th: float, target_median: float = 0.048) -> float:
    """Choose beta so the median per-item transmission cost hits the target."""
    values = np.asarray(loads, dtype=float)
    if len(values) < 1:
        raise ValueError("need at least one load value")
    capped = np.minimum(values, MISS_LOAD_CAP * l_th)
    psi = -np.log1p(-capped / l_th)
    med = float(np.median(psi))
    if med <= 0:
        raise ValueError("median barrier value is zero; cannot calibrate")
    return target_median / med
