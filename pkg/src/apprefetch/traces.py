"""Synthetic user watch traces and hourly server-load series, plus CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

__all__ = [
    "CsvFormatError",
    "TraceValidationError",
    "EpisodeTransitionModel",
    "WatchTrace",
    "ServerLoadSeries",
    "DEFAULT_FORWARD3_SPLIT",
    "sample_next_episode",
    "generate_watch_trace",
    "generate_server_load",
    "default_base_shape",
    "save_watch_trace_csv",
    "load_watch_trace_csv",
    "save_server_load_csv",
    "load_server_load_csv",
]


class CsvFormatError(ValueError):
    """Malformed CSV input; the message names the offending line."""


class TraceValidationError(ValueError):
    """Well-formed input that violates a domain invariant."""


# Aggregate forward mass split across jumps of +1/+2/+3, decreasing profile.
# The per-jump shares are estimates; only the 0.47 aggregate is calibrated.
DEFAULT_FORWARD3_SPLIT = (0.25 / 0.47, 0.12 / 0.47, 0.10 / 0.47)

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class EpisodeTransitionModel:
    """Markov model of episode jumps between consecutive viewing slots.

    Mass ``p_same`` stays on the current episode, ``p_forward3`` is split over
    the next three episodes by ``forward3_split``, and ``p_far`` spreads
    uniformly over every other episode.  Mass that would land outside
    ``[1, num_episodes]`` is dropped and the in-range distribution is
    renormalized.
    """

    num_episodes: int
    p_same: float = 0.35
    p_forward3: float = 0.47
    p_far: float = 0.18
    forward3_split: tuple[float, float, float] = DEFAULT_FORWARD3_SPLIT

    def __post_init__(self) -> None:
        if self.num_episodes < 1:
            raise TraceValidationError("num_episodes must be >= 1")
        for name in ("p_same", "p_forward3", "p_far"):
            if getattr(self, name) < 0:
                raise TraceValidationError(f"{name} must be nonnegative")
        if abs(self.p_same + self.p_forward3 + self.p_far - 1.0) > _PROB_TOL:
            raise TraceValidationError("p_same + p_forward3 + p_far must sum to 1")
        split = tuple(float(s) for s in self.forward3_split)
        if len(split) != 3 or any(s < 0 for s in split):
            raise TraceValidationError("forward3_split must be 3 nonnegative shares")
        if abs(sum(split) - 1.0) > _PROB_TOL:
            raise TraceValidationError("forward3_split must sum to 1")
        object.__setattr__(self, "forward3_split", split)

    def next_episode_distribution(self, current: int) -> np.ndarray:
        """Analytic next-episode distribution; index i is episode i+1."""
        return _distribution(self, current).copy()


def _check_episode(model: EpisodeTransitionModel, episode: int) -> None:
    if not 1 <= episode <= model.num_episodes:
        raise ValueError(
            f"episode {episode} outside [1, {model.num_episodes}]"
        )


@lru_cache(maxsize=4096)
def _distribution(model: EpisodeTransitionModel, current: int) -> np.ndarray:
    _check_episode(model, current)
    m = model.num_episodes
    dist = np.zeros(m)
    dist[current - 1] += model.p_same
    for step, share in enumerate(model.forward3_split, start=1):
        target = current + step
        if target <= m:
            dist[target - 1] += model.p_forward3 * share
    forward = {current + s for s in (1, 2, 3)}
    far = [e for e in range(1, m + 1) if e != current and e not in forward]
    if far:
        dist[np.asarray(far) - 1] += model.p_far / len(far)
    dist /= dist.sum()
    dist.flags.writeable = False
    return dist


@lru_cache(maxsize=4096)
def _cumulative(model: EpisodeTransitionModel, current: int) -> np.ndarray:
    cum = np.cumsum(_distribution(model, current))
    cum[-1] = 1.0
    cum.flags.writeable = False
    return cum


def sample_next_episode(
    model: EpisodeTransitionModel, current: int, rng: np.random.Generator
) -> int:
    """Draw the next watched episode given the current one."""
    cum = _cumulative(model, current)
    return int(np.searchsorted(cum, rng.random(), side="right")) + 1


@dataclass(frozen=True)
class WatchTrace:
    """Per-user sequence of (slot index, watched episode) pairs."""

    user_id: str
    slots: tuple[int, ...]
    episodes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.slots) != len(self.episodes):
            raise TraceValidationError("slots and episodes must align")
        if len(self.slots) < 1:
            raise TraceValidationError("trace length must be >= 1")
        if any(b <= a for a, b in zip(self.slots, self.slots[1:])):
            raise TraceValidationError("slot indices must be strictly increasing")
        if any(e < 1 for e in self.episodes):
            raise TraceValidationError("episode indices are 1-based, got < 1")

    def __len__(self) -> int:
        return len(self.slots)

    def validate_episode_range(self, num_episodes: int) -> None:
        for slot, ep in zip(self.slots, self.episodes):
            if ep > num_episodes:
                raise TraceValidationError(
                    f"slot {slot}: episode {ep} outside [1, {num_episodes}]"
                )


def generate_watch_trace(
    model: EpisodeTransitionModel,
    length: int,
    start_episode: int,
    rng: np.random.Generator,
    user_id: str = "synthetic",
) -> WatchTrace:
    """Simulate ``length`` consecutive viewing slots from the transition model."""
    if length < 1:
        raise ValueError("trace length must be >= 1")
    _check_episode(model, start_episode)
    episodes = [start_episode]
    for _ in range(length - 1):
        episodes.append(sample_next_episode(model, episodes[-1], rng))
    return WatchTrace(user_id, tuple(range(length)), tuple(episodes))


class ServerLoadSeries:
    """Hourly server load values; same unit as the load threshold."""

    def __init__(self, values, start_hour: int = 0):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or len(values) < 1:
            raise TraceValidationError("load series needs at least one value")
        if np.any(values < 0):
            raise TraceValidationError("load values must be nonnegative")
        self.values = values
        self.start_hour = int(start_hour)

    def __len__(self) -> int:
        return len(self.values)


# Two-peak daily profile (noon bump, tall narrow evening peak), unit max.
_BASE_SHAPE_UNIT = (
    0.16, 0.13, 0.11, 0.10, 0.10, 0.12,
    0.16, 0.22, 0.28, 0.33, 0.40, 0.46,
    0.50, 0.46, 0.40, 0.36, 0.38, 0.46,
    0.60, 0.78, 1.00, 0.88, 0.52, 0.28,
)


def default_base_shape(l_th: float = 1.0) -> np.ndarray:
    """Daily profile scaled so the peak sits at 0.95 of the load threshold."""
    return np.asarray(_BASE_SHAPE_UNIT) * (0.95 * l_th)


def generate_server_load(
    hours: int,
    base_shape,
    noise_std: float,
    weekly_amplitude: float,
    rng: np.random.Generator,
    start_hour: int = 0,
) -> ServerLoadSeries:
    """Hourly load: daily base shape, weekly sinusoid, clamped gaussian noise."""
    base_shape = np.asarray(base_shape, dtype=float)
    if hours < 24:
        raise ValueError("need at least 24 hours")
    if base_shape.shape != (24,):
        raise ValueError("base_shape must have 24 entries")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    t = np.arange(hours)
    values = base_shape[t % 24] * (1.0 + weekly_amplitude * np.sin(2 * np.pi * t / 168.0))
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=hours)
    return ServerLoadSeries(np.clip(values, 0.0, None), start_hour=start_hour)


_TRACE_HEADER = ["user_id", "slot", "episode"]
_LOAD_HEADER = ["hour", "load"]


def save_watch_trace_csv(path, trace: WatchTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TRACE_HEADER)
        for slot, ep in zip(trace.slots, trace.episodes):
            writer.writerow([trace.user_id, slot, ep])


def load_watch_trace_csv(path, num_episodes: int | None = None) -> WatchTrace:
    """Parse a watch-trace CSV; optionally validate the episode range."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _TRACE_HEADER:
            raise CsvFormatError(
                f"line 1: expected header {','.join(_TRACE_HEADER)}"
            )
        user_id = None
        slots, episodes = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise CsvFormatError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                slot, ep = int(row[1]), int(row[2])
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: {exc}") from exc
            if user_id is None:
                user_id = row[0]
            elif row[0] != user_id:
                raise TraceValidationError(
                    f"line {lineno}: mixed user ids ({row[0]!r} vs {user_id!r})"
                )
            slots.append(slot)
            episodes.append(ep)
    if not slots:
        raise TraceValidationError("empty trace: at least one data row required")
    trace = WatchTrace(user_id, tuple(slots), tuple(episodes))
    if num_episodes is not None:
        trace.validate_episode_range(num_episodes)
    return trace


def save_server_load_csv(path, series: ServerLoadSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LOAD_HEADER)
        for i, value in enumerate(series.values):
            writer.writerow([series.start_hour + i, repr(float(value))])


def load_server_load_csv(path) -> ServerLoadSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _LOAD_HEADER:
            raise CsvFormatError(f"line 1: expected header {','.join(_LOAD_HEADER)}")
        hours, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CsvFormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
            try:
                hour, value = int(row[0]), float(row[1])
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: {exc}") from exc
            if hours and hour != hours[-1] + 1:
                raise TraceValidationError(
                    f"line {lineno}: hours must be consecutive (got {hour} after {hours[-1]})"
                )
            hours.append(hour)
            values.append(value)
    if not values:
        raise TraceValidationError("empty load series: at least one data row required")
    return ServerLoadSeries(values, start_hour=hours[0])
