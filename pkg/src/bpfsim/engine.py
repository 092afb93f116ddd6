"""Discrete-event engine with an integer microsecond clock."""

from __future__ import annotations

import enum
import hashlib
import heapq
from typing import Any, Callable

import numpy as np

US_PER_S = 1_000_000


def seconds(t_us: int) -> float:
    return t_us / US_PER_S


def to_us(t_s: float) -> int:
    return int(round(t_s * US_PER_S))


class EventKind(enum.IntEnum):
    APP_GENERATE = 0
    TX_START = 1
    TX_END = 2
    RX_COMPLETE = 3
    BACKOFF_EXPIRE = 4
    MOBILITY_TICK = 5
    STATS_SAMPLE = 6


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class Event:
    """A queued event. The object itself is the cancellation handle."""

    __slots__ = ("fire_at", "seq", "kind", "payload", "cancelled", "dispatched")

    def __init__(self, fire_at: int, seq: int, kind: EventKind, payload: Any):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.payload = payload
        self.cancelled = False
        self.dispatched = False

    def __lt__(self, other: Event) -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)

    def __repr__(self) -> str:
        return f"Event({self.fire_at}us, #{self.seq}, {self.kind.name}, {self.payload!r})"


EventHandle = Event


class Engine:
    """Single-threaded event loop.

    Events with equal ``fire_at`` are dispatched in scheduling order.
    Handlers are registered per kind and called with the event payload.
    """

    def __init__(self) -> None:
        self.now = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: dict[EventKind, Callable[[Any], None]] = {}
        self.dispatched = 0
        self.listeners: list[Callable[[Event], None]] = []

    def on(self, kind: EventKind, handler: Callable[[Any], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, kind: EventKind, fire_at: int, payload: Any = None) -> Event:
        if fire_at < self.now:
            raise SchedulingError(
                f"{kind.name} scheduled at {fire_at}us but clock is at {self.now}us"
            )
        ev = Event(fire_at, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, kind: EventKind, delay: int, payload: Any = None) -> Event:
        return self.schedule(kind, self.now + delay, payload)

    @staticmethod
    def cancel(handle: Event | None) -> bool:
        if handle is None or handle.dispatched or handle.cancelled:
            return False
        handle.cancelled = True
        return True

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._heap if not ev.cancelled)

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; leave the clock at ``t_end``."""
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before clock {self.now}")
        heap = self._heap
        handlers = self._handlers
        listeners = self.listeners
        count = 0
        while heap and heap[0][0] <= t_end:
            fire_at, _, ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = fire_at
            ev.dispatched = True
            count += 1
            for listener in listeners:
                listener(ev)
            handler = handlers.get(ev.kind)
            if handler is not None:
                handler(ev.payload)
        self.now = t_end
        self.dispatched += count
        return count


def _name_words(name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class RngStreams:
    """Named random substreams derived from ``(master_seed, run_index, name)``.

    Streams are independent of creation order, so adding draws to one
    purpose never perturbs another.
    """

    def __init__(self, master_seed: int, run_index: int):
        self.master_seed = int(master_seed)
        self.run_index = int(run_index)
        self._streams: dict[str, np.random.Generator] = {}

    def seed_sequence(self, name: str) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, self.run_index, *_name_words(name)])

    def get(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.Generator(np.random.PCG64(self.seed_sequence(name)))
            self._streams[name] = gen
        return gen

    __getitem__ = get
