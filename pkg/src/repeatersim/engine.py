"""Deterministic discrete-event core.

Events dequeue in ``(fire_at, kind priority, seq)`` order. ``seq`` is
assigned at schedule time, so the order is fully determined by program
order, which in turn is fixed by the seeds.
"""
from __future__ import annotations

import heapq
from enum import IntEnum
from typing import Callable, Optional, TextIO

import numpy as np

from .core import SimTime, TrialStats


class Kind(IntEnum):
    # lower value fires first at equal timestamps: an expiry at t must
    # invalidate a herald or swap resolved at the same t
    MEMORY_EXPIRED = 0
    BSM_RESULT = 1
    PHOTON_AT_BSM = 2
    CLASSICAL_MESSAGE = 3
    EMIT_PHOTONS = 4
    ROUND_START = 5


class SchedulingError(ValueError):
    pass


class LivelockError(RuntimeError):
    """The queue drained before the stop condition was met."""


class Event:
    __slots__ = ("fire_at", "kind", "seq", "callback", "payload", "cancelled")

    def __init__(self, fire_at: SimTime, kind: Kind, seq: int, callback, payload: dict):
        self.fire_at = fire_at
        self.kind = kind
        self.seq = seq
        self.callback = callback
        self.payload = payload
        self.cancelled = False

    def __repr__(self):
        return f"Event({self.fire_at}, {self.kind.name}, seq={self.seq}, {self.payload})"


def stream_rng(master_seed: int, stream_id: int) -> np.random.Generator:
    """Independent generator reproducible from ``(master_seed, stream_id)``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(stream_id,)))


class Engine:
    """Single-threaded event loop with cancellable events and an optional trace."""

    def __init__(self, trace: Optional[TextIO] = None):
        self.now: SimTime = 0
        self.stats = TrialStats()
        self._queue: list = []
        self._seq = 0
        self._trace = trace
        self.events_fired = 0

    def schedule(self, fire_at: SimTime, kind: Kind, callback: Callable[[Event], None], **payload) -> Event:
        """Queue ``callback`` to run at ``fire_at``; the returned event is the cancel handle."""
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} before now={self.now}")
        event = Event(fire_at, kind, self._seq, callback, payload)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, int(kind), event.seq, event))
        return event

    def schedule_in(self, delay: SimTime, kind: Kind, callback, **payload) -> Event:
        return self.schedule(self.now + delay, kind, callback, **payload)

    @staticmethod
    def cancel(event: Optional[Event]) -> None:
        if event is not None:
            event.cancelled = True

    def pending(self) -> int:
        return sum(1 for entry in self._queue if not entry[3].cancelled)

    def step(self) -> Optional[Event]:
        """Fire the next live event; return it, or ``None`` if the queue is empty."""
        queue = self._queue
        while queue:
            event = heapq.heappop(queue)[3]
            if event.cancelled:
                continue
            self.now = event.fire_at
            self.events_fired += 1
            if self._trace is not None:
                self._write_trace(event)
            event.callback(event)
            return event
        return None

    def _write_trace(self, event: Event) -> None:
        fields = " ".join(f"{k}={event.payload[k]}" for k in sorted(event.payload))
        self._trace.write(f"{event.fire_at}\t{event.kind.name}\t{fields}\n")

    def run_until(
        self,
        t_end: Optional[SimTime] = None,
        target_successes: Optional[int] = None,
        stop: Optional[Callable[[], bool]] = None,
    ) -> TrialStats:
        """Drain events until ``t_end``, the success target, or ``stop()``.

        With a time bound the clock finishes at ``t_end`` even if the queue
        drains early; without one, an empty queue before the target is a
        livelock.
        """
        if t_end is None and target_successes is None and stop is None:
            raise ValueError("run_until needs a bounded stop condition")
        stats = self.stats
        queue = self._queue
        while True:
            if target_successes is not None and stats.end_to_end_successes >= target_successes:
                stats.elapsed = self.now
                return stats
            if stop is not None and stop():
                stats.elapsed = self.now
                return stats
            while queue and queue[0][3].cancelled:
                heapq.heappop(queue)
            if not queue:
                if t_end is None:
                    raise LivelockError(
                        f"event queue empty at t={self.now} with "
                        f"{stats.end_to_end_successes} successes"
                    )
                self.now = max(self.now, t_end)
                stats.elapsed = self.now
                return stats
            if t_end is not None and queue[0][0] > t_end:
                self.now = t_end
                stats.elapsed = t_end
                return stats
            self.step()
