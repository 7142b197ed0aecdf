"""Prefetching strategies: random-fixed, heuristic, offline optimum, online TD.

The offline solver does exact backward induction over the caches reachable
from the initial state under the reduced action space.  The online learner
approximates action values as a parameter row dotted with a binary state
feature vector and improves the rows by one-step temporal-difference descent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .costs import CostParams, barrier, stage_cost, stage_terms
from .mdp import (
    EMPTY_ACTION,
    MdpConfig,
    PrefetchAction,
    REDUCED_OFFSETS,
    SystemState,
    admissible_reduced_indices,
    reduced_action,
    simulate_run,
    step_cache,
)
from .metrics import (
    LedgerBuilder,
    RunLedger,
    SlotRecord,
    cost_summary,
    hit_ratio,
    precision_ratio,
)
from .traces import WatchTrace

__all__ = [
    "LearnParams",
    "TrainingError",
    "FamilyEvaluation",
    "OfflineSolution",
    "ReplayResult",
    "random_fixed_policy",
    "heuristic_policy",
    "evaluate_fixed_family",
    "evaluate_heuristic_family",
    "offline_solve",
    "feature_length",
    "feature_extract",
    "q_values",
    "q_value",
    "greedy_index",
    "epsilon_greedy",
    "td_update",
    "replay_train",
    "online_step",
    "run_online",
    "save_theta",
    "load_theta",
]

NUM_REDUCED_ACTIONS = len(REDUCED_OFFSETS)


class TrainingError(RuntimeError):
    """Non-finite TD error or runaway parameters during learning."""


@dataclass(frozen=True)
class LearnParams:
    alpha: float = 0.5
    gamma: float = 0.99
    epsilon0: float = 0.5
    epsilon_decay: float = 5e-4
    chi: float = 1e-4
    sweep_cap: int = 500
    divergence_bound: float = 1e6

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 <= self.epsilon0 < 1:
            raise ValueError("epsilon0 must lie in [0, 1)")
        if self.epsilon_decay < 0:
            raise ValueError("epsilon_decay must be nonnegative")
        if not self.chi > 0:
            raise ValueError("chi must be positive")


# ---------------------------------------------------------------------------
# Baseline policies


def random_fixed_policy(k: int, config: MdpConfig, rng: np.random.Generator):
    """Prefetch k uniformly random episodes each slot."""
    if not 0 <= k <= config.prefetch_cap:
        raise ValueError(f"k={k} outside [0, {config.prefetch_cap}]")

    def policy(state: SystemState, slot: int) -> PrefetchAction:
        if k == 0:
            return EMPTY_ACTION
        picks = rng.choice(config.num_episodes, size=k, replace=False) + 1
        return PrefetchAction(tuple(sorted(int(p) for p in picks)))

    return policy


def heuristic_policy(k: int, config: MdpConfig, rng: np.random.Generator):
    """Prefetch k random episodes out of the next three ahead of the watched one."""
    if not 0 <= k <= 3:
        raise ValueError(f"k={k} outside [0, 3]")

    def policy(state: SystemState, slot: int) -> PrefetchAction:
        candidates = [
            state.watched + o
            for o in (1, 2, 3)
            if state.watched + o <= config.num_episodes
        ]
        if k == 0 or not candidates:
            return EMPTY_ACTION
        if len(candidates) <= k:
            return PrefetchAction(tuple(candidates))
        picks = rng.choice(len(candidates), size=k, replace=False)
        return PrefetchAction(tuple(sorted(candidates[i] for i in picks)))

    return policy


@dataclass
class FamilyEvaluation:
    """Per-choice ledgers of an enumerated strategy family (keyed by k)."""

    ledgers: dict[int, RunLedger]

    def mean_total_cost(self) -> float:
        return float(np.mean([cost_summary(l).total for l in self.ledgers.values()]))

    def mean_monetary_cost(self) -> float:
        return float(np.mean([cost_summary(l).monetary for l in self.ledgers.values()]))

    def mean_qoe_cost(self) -> float:
        return float(np.mean([cost_summary(l).qoe for l in self.ledgers.values()]))

    def mean_precision(self) -> float:
        return float(np.mean([precision_ratio(l) for l in self.ledgers.values()]))

    def mean_hit_ratio(self) -> float:
        return float(np.mean([hit_ratio(l) for l in self.ledgers.values()]))


def evaluate_fixed_family(
    trace: WatchTrace,
    loads,
    config: MdpConfig,
    params: CostParams,
    rng: np.random.Generator,
) -> FamilyEvaluation:
    """Simulate every fixed prefetch count k = 0..cap on the identical inputs."""
    ledgers = {}
    for k in range(config.prefetch_cap + 1):
        policy = random_fixed_policy(k, config, rng)
        ledgers[k] = simulate_run(policy, trace, loads, config, params)
    return FamilyEvaluation(ledgers)


def evaluate_heuristic_family(
    trace: WatchTrace,
    loads,
    config: MdpConfig,
    params: CostParams,
    rng: np.random.Generator,
) -> FamilyEvaluation:
    """Simulate forward-window prefetching for k = 0..3 on the identical inputs."""
    ledgers = {}
    for k in range(min(3, config.prefetch_cap) + 1):
        policy = heuristic_policy(k, config, rng)
        ledgers[k] = simulate_run(policy, trace, loads, config, params)
    return FamilyEvaluation(ledgers)


# ---------------------------------------------------------------------------
# Offline backward induction


@dataclass
class OfflineSolution:
    """Tabulated per-slot optimal actions over reachable caches."""

    total_cost: float
    plan: list[dict[tuple, PrefetchAction]]
    initial_cache: tuple

    def policy(self):
        plan = self.plan

        def _policy(state: SystemState, slot: int) -> PrefetchAction:
            return plan[slot][state.cache]

        return _policy


def offline_solve(
    trace: WatchTrace,
    loads,
    config: MdpConfig,
    params: CostParams,
    initial_cache=None,
) -> OfflineSolution:
    """Exact minimum-cost plan for a fully known trace and load sequence.

    Backward induction with terminal value zero over the caches reachable
    from the initial one; the argmin searches the reduced action set plus the
    no-op, with ties broken toward the lowest action index.  Slots at or above
    the threshold load admit only the no-op.
    """
    T = len(trace)
    if len(loads) < T:
        raise ValueError("load series shorter than the trace")
    init = tuple(sorted((initial_cache or {}).items()))

    slot_actions: list[list[PrefetchAction]] = []
    psis: list[float] = []
    for t in range(T):
        w = trace.episodes[t]
        load = float(loads[t])
        if load >= params.l_th:
            indices = [0]
            psis.append(0.0)
        else:
            indices = admissible_reduced_indices(w, config)
            psis.append(barrier(load, params.l_th))
        slot_actions.append([reduced_action(i, w) for i in indices])

    layers: list[set] = [{init}]
    for t in range(T):
        w = trace.episodes[t]
        nxt = set()
        for cache in layers[t]:
            state = SystemState(w, cache)
            for action in slot_actions[t]:
                nxt.add(step_cache(state, action, config))
        layers.append(nxt)

    values = {cache: 0.0 for cache in layers[T]}
    plan_rev: list[dict[tuple, PrefetchAction]] = []
    for t in reversed(range(T)):
        w = trace.episodes[t]
        load = float(loads[t])
        psi = psis[t]
        slot_plan: dict[tuple, PrefetchAction] = {}
        new_values: dict[tuple, float] = {}
        for cache in layers[t]:
            state = SystemState(w, cache)
            cached = {ep for ep, _ in cache}
            miss = 0 if w in cached else 1
            best_v = None
            best_a = None
            for action in slot_actions[t]:
                x = len(action.prefetch)
                stored = len(cached | set(action.prefetch))
                g = stage_terms(x, miss, stored, load, psi if x else 0.0, params).total
                v = g + values[step_cache(state, action, config)]
                if best_v is None or v < best_v:
                    best_v, best_a = v, action
            slot_plan[cache] = best_a
            new_values[cache] = best_v
        plan_rev.append(slot_plan)
        values = new_values
    plan_rev.reverse()
    return OfflineSolution(total_cost=values[init], plan=plan_rev, initial_cache=init)


# ---------------------------------------------------------------------------
# Linear value approximation


def feature_length(config: MdpConfig) -> int:
    return config.num_episodes * (config.cache_lifetime + 2)


def feature_extract(state: SystemState, config: MdpConfig) -> np.ndarray:
    """Binary state encoding, one block of cache_lifetime + 2 bits per episode.

    Block layout: [watching, life=1, ..., life=TTL, not-cached]; exactly one
    of the trailing TTL + 1 bits is set per block.
    """
    block = config.cache_lifetime + 2
    vec = np.zeros(config.num_episodes * block)
    for ep in range(1, config.num_episodes + 1):
        vec[(ep - 1) * block + block - 1] = 1.0
    for ep, life in state.cache:
        base = (ep - 1) * block
        vec[base + life] = 1.0
        vec[base + block - 1] = 0.0
    vec[(state.watched - 1) * block] = 1.0
    return vec


def q_values(theta: np.ndarray, features: np.ndarray) -> np.ndarray:
    return theta @ features


def q_value(theta: np.ndarray, features: np.ndarray, action_index: int) -> float:
    return float(theta[action_index] @ features)


def greedy_index(theta: np.ndarray, features: np.ndarray, admissible) -> int:
    """Lowest-index minimizer of the action values over the admissible set."""
    best_i = admissible[0]
    best_q = float(theta[best_i] @ features)
    for i in admissible[1:]:
        q = float(theta[i] @ features)
        if q < best_q:
            best_i, best_q = i, q
    return best_i


def epsilon_greedy(
    theta: np.ndarray,
    features: np.ndarray,
    admissible,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    if epsilon > 0 and rng.random() < epsilon:
        return int(admissible[rng.integers(len(admissible))])
    return greedy_index(theta, features, admissible)


def td_update(
    theta: np.ndarray,
    features: np.ndarray,
    action_index: int,
    cost: float,
    next_features: np.ndarray | None,
    next_admissible,
    learn: LearnParams,
) -> np.ndarray:
    """One temporal-difference step on the chosen action's parameter row.

    The target is cost plus the discounted minimum next-state value, or just
    the cost when ``next_features`` is None (end of horizon).  The step moves
    along the negative error gradient, normalized by the squared feature norm
    so that the updated value closes exactly an ``alpha`` fraction of the TD
    error: with alpha = 0.5 the new estimate blends old value and target with
    equal weight.  An unnormalized step with these many-hot features would
    overshoot by the number of set bits and diverge for any alpha above
    2/num_bits.  Only the row of ``action_index`` changes; the input matrix is
    left untouched.
    """
    q_sa = float(theta[action_index] @ features)
    if next_features is None:
        target = cost
    else:
        nxt = theta[np.asarray(next_admissible)] @ next_features
        target = learn.gamma * float(np.min(nxt)) + cost
    delta = target - q_sa
    if not np.isfinite(delta):
        raise TrainingError(f"non-finite TD error {delta!r}")
    norm_sq = float(features @ features)
    if norm_sq <= 0:
        raise TrainingError("feature vector is all-zero")
    out = theta.copy()
    out[action_index] += (learn.alpha / norm_sq) * delta * features
    return out


def _admissible_indices(
    watched: int, load: float, config: MdpConfig, params: CostParams
) -> list[int]:
    if load >= params.l_th:
        return [0]
    return admissible_reduced_indices(watched, config)


class _SparseStateCodec:
    """Sparse view of the binary state encoding for the training hot loop.

    Every state sets exactly one bit per episode block plus the watch bit, so
    a state is fully described by ``num_episodes + 1`` column indices and the
    squared feature norm is a constant.
    """

    def __init__(self, config: MdpConfig) -> None:
        self.block = config.cache_lifetime + 2
        self.m = config.num_episodes
        self._base = np.arange(self.m, dtype=np.intp) * self.block + (self.block - 1)
        self.norm_sq = float(self.m + 1)

    def indices(self, watched: int, cache_items) -> np.ndarray:
        idx = np.empty(self.m + 1, dtype=np.intp)
        idx[: self.m] = self._base
        for ep, life in cache_items:
            idx[ep - 1] = (ep - 1) * self.block + life
        idx[self.m] = (watched - 1) * self.block
        return idx


@dataclass
class _SlotPlan:
    """Per-slot constants of one training trace (loads never change)."""

    watched: int
    load: float
    admissible: tuple[int, ...]
    actions: tuple[tuple[int, ...], ...]  # prefetch sets per admissible index
    psi: float


def _prepare_slots(
    trace: WatchTrace, loads, config: MdpConfig, params: CostParams
) -> list[_SlotPlan]:
    if len(loads) < len(trace):
        raise ValueError("load series shorter than the trace")
    plans = []
    for t in range(len(trace)):
        w = trace.episodes[t]
        load = float(loads[t])
        if load >= params.l_th:
            adm = (0,)
            psi = 0.0
        else:
            adm = tuple(admissible_reduced_indices(w, config))
            psi = barrier(load, params.l_th)
        actions = tuple(reduced_action(i, w).prefetch for i in adm)
        plans.append(_SlotPlan(w, load, adm, actions, psi))
    return plans


def _training_pass(
    theta: np.ndarray,
    plans: list[_SlotPlan],
    codec: _SparseStateCodec,
    config: MdpConfig,
    params: CostParams,
    learn: LearnParams,
    rng: np.random.Generator,
    eps: float,
) -> float:
    """One epsilon-greedy episode over a prepared trace, updating theta in place."""
    step_scale = learn.alpha / codec.norm_sq
    cache: dict[int, int] = {}
    idx = codec.indices(plans[0].watched, cache.items())
    T = len(plans)
    for t in range(T):
        plan = plans[t]
        qs = theta[:, idx].sum(axis=1)
        if eps > 0 and rng.random() < eps:
            pos = int(rng.integers(len(plan.admissible)))
        else:
            pos = 0
            best = qs[plan.admissible[0]]
            for j in range(1, len(plan.admissible)):
                q = qs[plan.admissible[j]]
                if q < best:
                    best, pos = q, j
        a_idx = plan.admissible[pos]
        prefetch = plan.actions[pos]

        x_count = len(prefetch)
        miss = 0 if plan.watched in cache else 1
        stored = len(cache) + sum(1 for ep in prefetch if ep not in cache)
        g = stage_terms(
            x_count, miss, stored, plan.load, plan.psi if x_count else 0.0, params
        ).total

        next_cache = {
            ep: life - 1 for ep, life in cache.items()
            if ep not in prefetch and life > 1
        }
        for ep in prefetch:
            next_cache[ep] = config.cache_lifetime

        if t + 1 < T:
            nxt = plans[t + 1]
            next_idx = codec.indices(nxt.watched, next_cache.items())
            next_qs = theta[:, next_idx].sum(axis=1)
            target = learn.gamma * float(min(next_qs[i] for i in nxt.admissible)) + g
        else:
            next_idx = None
            target = g
        delta = target - float(qs[a_idx])
        if not np.isfinite(delta):
            raise TrainingError(f"non-finite TD error {delta!r}")
        theta[a_idx, idx] += step_scale * delta
        eps = max(0.0, eps - learn.epsilon_decay)
        cache = next_cache
        if next_idx is not None:
            idx = next_idx
    return eps


@dataclass
class ReplayResult:
    theta: np.ndarray
    converged: bool
    sweeps: int
    final_epsilon: float


def replay_train(
    traces,
    loads_list,
    config: MdpConfig,
    params: CostParams,
    learn: LearnParams,
    rng: np.random.Generator,
) -> ReplayResult:
    """Sweep recorded traces with epsilon-greedy TD learning until the matrix
    settles.

    Epsilon shrinks by the decay rate once per processed slot (floored at 0).
    Training stops when the largest per-sweep parameter change drops below
    chi, or at the sweep cap with ``converged=False``.
    """
    if not traces:
        raise ValueError("need at least one trace")
    if len(loads_list) != len(traces):
        raise ValueError("traces and load series must align")
    codec = _SparseStateCodec(config)
    all_plans = [
        _prepare_slots(trace, loads, config, params)
        for trace, loads in zip(traces, loads_list)
    ]
    theta = np.zeros((NUM_REDUCED_ACTIONS, feature_length(config)))
    eps = learn.epsilon0
    converged = False
    sweeps = 0
    tail_sum = np.zeros_like(theta)
    tail_n = 0
    tail_start = learn.sweep_cap // 2
    for sweep in range(1, learn.sweep_cap + 1):
        before = theta.copy()
        for plans in all_plans:
            eps = _training_pass(theta, plans, codec, config, params, learn, rng, eps)
        sweeps = sweep
        if sweep > tail_start:
            tail_sum += theta
            tail_n += 1
        if float(np.max(np.abs(theta))) > learn.divergence_bound:
            raise TrainingError(
                f"parameters exceeded {learn.divergence_bound:g} after sweep {sweep}"
            )
        if float(np.max(np.abs(theta - before))) < learn.chi:
            converged = True
            break
    if not converged and tail_n > 0:
        # Constant-step sweeps over heterogeneous traces keep bouncing between
        # trace-specific targets; the averaged iterate strips that oscillation.
        theta = tail_sum / tail_n
    return ReplayResult(theta=theta, converged=converged, sweeps=sweeps, final_epsilon=eps)


@dataclass
class OnlineStep:
    action: PrefetchAction
    action_index: int
    cost: object
    next_state: SystemState | None
    theta: np.ndarray


def online_step(
    theta: np.ndarray,
    state: SystemState,
    load: float,
    next_watched: int | None,
    next_load: float | None,
    config: MdpConfig,
    params: CostParams,
    learn: LearnParams,
) -> OnlineStep:
    """Greedy slot during deployment: act, observe cost, keep learning."""
    x = feature_extract(state, config)
    adm = _admissible_indices(state.watched, load, config, params)
    a_idx = greedy_index(theta, x, adm)
    action = reduced_action(a_idx, state.watched)
    cost = stage_cost(state, action, load, params)
    next_cache = step_cache(state, action, config)
    if next_watched is None:
        new_theta = td_update(theta, x, a_idx, cost.total, None, None, learn)
        next_state = None
    else:
        next_state = SystemState(next_watched, next_cache)
        nx = feature_extract(next_state, config)
        nadm = _admissible_indices(next_watched, next_load, config, params)
        new_theta = td_update(theta, x, a_idx, cost.total, nx, nadm, learn)
    return OnlineStep(action, a_idx, cost, next_state, new_theta)


def run_online(
    theta: np.ndarray,
    trace: WatchTrace,
    loads,
    config: MdpConfig,
    params: CostParams,
    learn: LearnParams,
) -> tuple[RunLedger, np.ndarray]:
    """Greedy deployment over one trace with continued TD updates.

    The caller's matrix is not modified; the updated copy is returned with
    the ledger.
    """
    if len(loads) < len(trace):
        raise ValueError("load series shorter than the trace")
    theta = theta.copy()
    builder = LedgerBuilder()
    cache: dict[int, int] = {}
    T = len(trace)
    for t in range(T):
        w = trace.episodes[t]
        load = float(loads[t])
        state = SystemState.make(w, cache)
        if t + 1 < T:
            nw, nl = trace.episodes[t + 1], float(loads[t + 1])
        else:
            nw, nl = None, None
        step = online_step(theta, state, load, nw, nl, config, params, learn)
        theta = step.theta
        hit = w in cache
        delay = params.d0 if hit else params.server_delay(load)
        builder.record_slot(
            SlotRecord(
                slot=t,
                load=load,
                watched=w,
                prefetched=step.action.prefetch,
                hit=hit,
                startup_delay=delay,
                cost_total=step.cost.total,
                cost_monetary=step.cost.monetary,
                cost_qoe=step.cost.qoe,
            )
        )
        cache = dict(step_cache(state, step.action, config))
    return builder.build(), theta


# ---------------------------------------------------------------------------
# Parameter matrix persistence

_THETA_MAGIC = b"APQT"


def save_theta(path, theta: np.ndarray, config: MdpConfig) -> None:
    """Row-major float64 dump with a fixed-size header for self-description."""
    rows, cols = theta.shape
    if cols != feature_length(config):
        raise ValueError("theta width does not match the feature length")
    header = struct.pack(
        "<4sIII", _THETA_MAGIC, config.num_episodes, config.cache_lifetime, rows
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(theta, dtype="<f8").tobytes())


def load_theta(path) -> tuple[np.ndarray, int, int]:
    """Read a saved matrix; returns (theta, num_episodes, cache_lifetime)."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != _THETA_MAGIC:
            raise ValueError("not a parameter-matrix file")
        _, m, ttl, rows = struct.unpack("<4sIII", header)
        cols = m * (ttl + 2)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError("parameter-matrix payload size mismatch")
    return data.reshape(rows, cols).copy(), m, ttl
