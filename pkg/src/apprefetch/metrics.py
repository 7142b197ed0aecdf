"""Run ledgers and evaluation metrics: precision ratio, hit ratio, cost sums."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SlotRecord",
    "PrefetchEvent",
    "RunLedger",
    "LedgerBuilder",
    "CostSummary",
    "prefetch_counts",
    "precision_ratio",
    "hit_ratio",
    "cost_summary",
]


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    load: float
    watched: int
    prefetched: tuple[int, ...]
    hit: bool
    startup_delay: float
    cost_total: float
    cost_monetary: float
    cost_qoe: float


@dataclass
class PrefetchEvent:
    """One prefetched item and the slots in which it was later consumed."""

    slot: int
    episode: int
    consumed_slots: list[int] = field(default_factory=list)


@dataclass
class RunLedger:
    records: list[SlotRecord]
    events: list[PrefetchEvent]

    def __len__(self) -> int:
        return len(self.records)


class LedgerBuilder:
    """Incrementally records slots and attributes cache hits to prefetches.

    A hit is attributed to the most recent prefetch of the watched episode;
    re-prefetching an item starts a new event and the old one stops accruing.
    """

    def __init__(self) -> None:
        self._records: list[SlotRecord] = []
        self._events: list[PrefetchEvent] = []
        self._active: dict[int, int] = {}

    def record_slot(self, record: SlotRecord) -> None:
        if record.hit:
            idx = self._active.get(record.watched)
            if idx is not None:
                self._events[idx].consumed_slots.append(record.slot)
        for ep in record.prefetched:
            self._events.append(PrefetchEvent(record.slot, ep))
            self._active[ep] = len(self._events) - 1
        self._records.append(record)

    def build(self) -> RunLedger:
        return RunLedger(self._records, self._events)


def prefetch_counts(ledger: RunLedger, count_repeats: bool = True) -> tuple[int, int]:
    """(useful prefetches, total prefetches).

    With ``count_repeats`` every consumption slot counts, so one prefetch can
    contribute more than once; otherwise each event counts at most once.
    """
    if count_repeats:
        useful = sum(len(ev.consumed_slots) for ev in ledger.events)
    else:
        useful = sum(1 for ev in ledger.events if ev.consumed_slots)
    return useful, len(ledger.events)


def precision_ratio(ledger: RunLedger, count_repeats: bool = True) -> float:
    """Useful over total prefetches; 0.0 when nothing was prefetched."""
    useful, total = prefetch_counts(ledger, count_repeats)
    if total == 0:
        return 0.0
    return useful / total


def hit_ratio(ledger: RunLedger, count_repeats: bool = True) -> float:
    """Useful prefetches over the number of watch requests (one per slot)."""
    if len(ledger.records) < 1:
        raise ValueError("ledger is empty")
    useful, _ = prefetch_counts(ledger, count_repeats)
    return useful / len(ledger.records)


@dataclass(frozen=True)
class CostSummary:
    total: float
    monetary: float
    qoe: float
    per_slot_total: np.ndarray
    per_slot_monetary: np.ndarray
    per_slot_qoe: np.ndarray


def cost_summary(ledger: RunLedger) -> CostSummary:
    total = np.asarray([r.cost_total for r in ledger.records])
    monetary = np.asarray([r.cost_monetary for r in ledger.records])
    qoe = np.asarray([r.cost_qoe for r in ledger.records])
    return CostSummary(
        float(total.sum()), float(monetary.sum()), float(qoe.sum()),
        total, monetary, qoe,
    )
