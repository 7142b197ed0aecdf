"""Cache dynamics, action spaces and slot-by-slot simulation of one run."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np

from .costs import CostParams, stage_cost
from .metrics import LedgerBuilder, RunLedger, SlotRecord
from .traces import EpisodeTransitionModel, WatchTrace

__all__ = [
    "MdpConfig",
    "SystemState",
    "PrefetchAction",
    "EMPTY_ACTION",
    "REDUCED_OFFSETS",
    "step_cache",
    "advance",
    "transition_probability",
    "enumerate_actions_full",
    "enumerate_actions_reduced",
    "admissible_reduced_indices",
    "reduced_action",
    "state_space_size",
    "simulate_run",
]


@dataclass(frozen=True)
class MdpConfig:
    """Instance sizes: episode count, cache TTL, per-slot cap, horizon."""

    num_episodes: int
    cache_lifetime: int
    prefetch_cap: int
    horizon: int

    def __post_init__(self) -> None:
        for name in ("num_episodes", "cache_lifetime", "prefetch_cap", "horizon"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class PrefetchAction:
    """Set of episodes to prefetch this slot, stored sorted."""

    prefetch: tuple[int, ...]

    @classmethod
    def of(cls, episodes) -> "PrefetchAction":
        return cls(tuple(sorted(set(episodes))))


EMPTY_ACTION = PrefetchAction(())


@dataclass(frozen=True)
class SystemState:
    """Watched episode plus cache contents as sorted (episode, life) pairs."""

    watched: int
    cache: tuple[tuple[int, int], ...]

    @classmethod
    def make(cls, watched: int, cache: Mapping[int, int] | None = None) -> "SystemState":
        items = tuple(sorted((cache or {}).items()))
        return cls(watched, items)

    def cache_map(self) -> dict[int, int]:
        return dict(self.cache)

    def cached_episodes(self) -> set[int]:
        return {ep for ep, _ in self.cache}


def validate_state(state: SystemState, config: MdpConfig) -> None:
    if not 1 <= state.watched <= config.num_episodes:
        raise ValueError(f"watched episode {state.watched} out of range")
    seen = set()
    for ep, life in state.cache:
        if not 1 <= ep <= config.num_episodes:
            raise ValueError(f"cached episode {ep} out of range")
        if not 1 <= life <= config.cache_lifetime:
            raise ValueError(f"lifetime {life} outside [1, {config.cache_lifetime}]")
        if ep in seen:
            raise ValueError(f"duplicate cached episode {ep}")
        seen.add(ep)


def _check_action(action: PrefetchAction, config: MdpConfig) -> None:
    if len(action.prefetch) > config.prefetch_cap:
        raise ValueError(
            f"prefetch set of size {len(action.prefetch)} exceeds cap {config.prefetch_cap}"
        )
    for ep in action.prefetch:
        if not 1 <= ep <= config.num_episodes:
            raise ValueError(f"prefetch episode {ep} out of range")


def step_cache(
    state: SystemState, action: PrefetchAction, config: MdpConfig
) -> tuple[tuple[int, int], ...]:
    """Next-slot cache: survivors age by one, expired items drop out, and
    prefetched items enter (or reset) at the full lifetime."""
    _check_action(action, config)
    fetched = set(action.prefetch)
    nxt = {}
    for ep, life in state.cache:
        if ep in fetched:
            continue
        if life - 1 >= 1:
            nxt[ep] = life - 1
    for ep in fetched:
        nxt[ep] = config.cache_lifetime
    return tuple(sorted(nxt.items()))


def advance(
    state: SystemState, action: PrefetchAction, next_watched: int, config: MdpConfig
) -> SystemState:
    return SystemState(next_watched, step_cache(state, action, config))


def transition_probability(
    state: SystemState,
    action: PrefetchAction,
    next_state: SystemState,
    model: EpisodeTransitionModel,
    config: MdpConfig,
) -> float:
    """Episode-transition probability when the cache update matches, else 0."""
    if next_state.cache != step_cache(state, action, config):
        return 0.0
    dist = model.next_episode_distribution(state.watched)
    return float(dist[next_state.watched - 1])


def enumerate_actions_full(config: MdpConfig) -> list[PrefetchAction]:
    """Every prefetch subset up to the cap, including the empty action."""
    episodes = range(1, config.num_episodes + 1)
    actions = [EMPTY_ACTION]
    for k in range(1, config.prefetch_cap + 1):
        actions.extend(PrefetchAction(combo) for combo in combinations(episodes, k))
    return actions


# Fixed indexing of the reduced action space: offsets ahead of the watched
# episode.  Index 0 is the no-op; singletons, pairs, then the triple.
REDUCED_OFFSETS: tuple[tuple[int, ...], ...] = (
    (),
    (1,),
    (2,),
    (3,),
    (1, 2),
    (1, 3),
    (2, 3),
    (1, 2, 3),
)


def reduced_action(index: int, watched: int) -> PrefetchAction:
    return PrefetchAction(tuple(watched + o for o in REDUCED_OFFSETS[index]))


def admissible_reduced_indices(watched: int, config: MdpConfig) -> list[int]:
    """Reduced-action indices whose episodes all exist and fit under the cap.

    Actions that would need truncation near the end of the series are
    excluded rather than clipped.
    """
    out = []
    for i, offsets in enumerate(REDUCED_OFFSETS):
        if len(offsets) > config.prefetch_cap:
            continue
        if offsets and watched + offsets[-1] > config.num_episodes:
            continue
        out.append(i)
    return out


def enumerate_actions_reduced(state: SystemState, config: MdpConfig) -> list[PrefetchAction]:
    return [
        reduced_action(i, state.watched)
        for i in admissible_reduced_indices(state.watched, config)
    ]


def state_space_size(config: MdpConfig) -> int:
    """m * (TTL + 1)^m distinct states (exact, arbitrary precision)."""
    return config.num_episodes * (config.cache_lifetime + 1) ** config.num_episodes


Policy = Callable[[SystemState, int], PrefetchAction]


def simulate_run(
    policy: Policy,
    trace: WatchTrace,
    loads: Sequence[float],
    config: MdpConfig,
    params: CostParams,
) -> RunLedger:
    """Drive one run of ``policy`` over the trace, recording a full ledger.

    At slots where the load has reached the threshold any nonempty prefetch
    is inadmissible and is replaced by the no-op.
    """
    if len(loads) < len(trace):
        raise ValueError("load series shorter than the trace")
    builder = LedgerBuilder()
    cache: dict[int, int] = {}
    for t in range(len(trace)):
        watched = trace.episodes[t]
        load = float(loads[t])
        state = SystemState.make(watched, cache)
        action = policy(state, t)
        _check_action(action, config)
        if load >= params.l_th and action.prefetch:
            action = EMPTY_ACTION
        cost = stage_cost(state, action, load, params)
        hit = watched in cache
        delay = params.d0 if hit else params.server_delay(load)
        builder.record_slot(
            SlotRecord(
                slot=t,
                load=load,
                watched=watched,
                prefetched=action.prefetch,
                hit=hit,
                startup_delay=delay,
                cost_total=cost.total,
                cost_monetary=cost.monetary,
                cost_qoe=cost.qoe,
            )
        )
        cache = dict(step_cache(state, action, config))
    return builder.build()
