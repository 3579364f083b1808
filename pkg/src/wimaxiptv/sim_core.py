"""Deterministic discrete-event engine.

Time is an integer count of microseconds. Events at equal timestamps are
dispatched in the order they were scheduled. Random numbers come from named
streams, each seeded from ``(scenario seed, stream label)`` so that adding a
new consumer never shifts the draws of an existing one.

The generator behind every stream is numpy's PCG64 (128-bit state), seeded
through ``SeedSequence``. Do not change it: recorded runs would no longer
replay.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

US_PER_S = 1_000_000
#: Largest representable time; arithmetic saturates here instead of wrapping.
SIMTIME_MAX = 2**63 - 1


def sat_add(t: int, dt: int) -> int:
    """Saturating add on the time axis (never negative, never wraps)."""
    r = t + dt
    if r > SIMTIME_MAX:
        return SIMTIME_MAX
    if r < 0:
        return 0
    return r


def seconds_to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


class SchedulingError(RuntimeError):
    """An event was scheduled in the past, or a handle was misused."""


class EventKind(str, enum.Enum):
    FRAME_ARRIVAL = "frame-arrival"
    FRAME_BOUNDARY = "frame-boundary"
    TRANSMISSION_COMPLETE = "transmission-complete"
    POLL = "poll"
    MEASUREMENT_TICK = "measurement-tick"


@dataclass(eq=False)
class Event:
    fire_at: int
    kind: EventKind
    target: str
    data: object = None
    seq: int = -1
    state: str = "new"  # new -> pending -> fired | cancelled


class RandomStream:
    """A named, independently seeded source of random numbers."""

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = stream_id
        digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32 & 0xFFFFFFFF, *words])
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def uniform(self) -> float:
        return float(self.generator.random())

    def normal(self) -> float:
        return float(self.generator.standard_normal())

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id!r})"


def draw_uniform(stream: RandomStream) -> float:
    """One draw in [0, 1) from ``stream``; other streams are untouched."""
    return stream.uniform()


@dataclass
class Simulator:
    """Virtual clock plus an ordered event queue.

    Handlers are registered per :class:`EventKind` and receive the event.
    """

    seed: int = 0
    now: int = 0
    trace: TextIO | None = None
    _heap: list = field(default_factory=list, repr=False)
    _next_seq: int = 0
    _handlers: dict = field(default_factory=dict, repr=False)
    _streams: dict = field(default_factory=dict, repr=False)
    dispatched: int = 0
    counts: dict = field(default_factory=dict)

    def on(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        self._handlers[kind] = handler

    def stream(self, stream_id: str) -> RandomStream:
        s = self._streams.get(stream_id)
        if s is None:
            s = self._streams[stream_id] = RandomStream(self.seed, stream_id)
        return s

    def schedule(self, event: Event) -> Event:
        if event.fire_at < self.now:
            raise SchedulingError(
                f"event {event.kind.value}/{event.target} at {event.fire_at} us "
                f"is before the clock ({self.now} us)"
            )
        if event.state != "new":
            raise SchedulingError("event already scheduled")
        event.seq = self._next_seq
        self._next_seq += 1
        event.state = "pending"
        heapq.heappush(self._heap, (event.fire_at, event.seq, event))
        return event

    def at(self, fire_at: int, kind: EventKind, target: str, data=None) -> Event:
        return self.schedule(Event(fire_at, kind, target, data))

    def cancel(self, handle: Event) -> None:
        if handle.state != "pending":
            raise SchedulingError(f"cannot cancel an event in state {handle.state!r}")
        handle.state = "cancelled"

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._heap if ev.state == "pending")

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; leave the clock at ``t_end``."""
        heap = self._heap
        handlers = self._handlers
        counts = self.counts
        trace = self.trace
        n = 0
        while heap and heap[0][0] <= t_end:
            fire_at, seq, ev = heapq.heappop(heap)
            if ev.state != "pending":
                continue
            ev.state = "fired"
            self.now = fire_at
            if trace is not None:
                trace.write(f"{fire_at}\t{seq}\t{ev.kind.value}\t{ev.target}\n")
            counts[ev.kind.value] = counts.get(ev.kind.value, 0) + 1
            handler = handlers.get(ev.kind)
            if handler is not None:
                handler(ev)
            n += 1
        if t_end > self.now:
            self.now = t_end
        self.dispatched += n
        return n
