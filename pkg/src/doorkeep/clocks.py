"""Injectable time sources.

Everything time-dependent (lock windows, challenge expiry, template
recency, heartbeats) takes a clock object instead of reading the wall
clock directly, so tests and the replay harness run on simulated time.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Time source interface: milliseconds since an arbitrary epoch."""

    def now_ms(self) -> int:
        raise NotImplementedError


class WallClock(Clock):
    """Monotonic wall-clock time for live runs."""

    def now_ms(self) -> int:
        return time.monotonic_ns() // 1_000_000


class SimulatedClock(Clock):
    """Manually advanced clock for tests and deterministic replay."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        with self._lock:
            self._now += delta_ms
            return self._now


class TickCounter:
    """Strictly increasing counter for recency ordering (template store)."""

    def __init__(self, start: int = 0):
        self._next = start
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            value = self._next
            self._next += 1
            return value
