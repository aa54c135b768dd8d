"""Millisecond clocks shared by the recorder and the simulator driver."""

from __future__ import annotations

import threading
import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> int: ...

    def sleep(self, ms: float) -> None: ...


class VirtualClock:
    """Millisecond clock that only moves when told to."""

    def __init__(self, start: int = 0) -> None:
        self._now = int(start)
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def sleep(self, ms: float) -> None:
        self.advance(ms)

    def advance(self, ms: float) -> None:
        if ms < 0:
            raise ValueError("cannot move a clock backwards")
        with self._lock:
            self._now += int(round(ms))

    def set(self, ms: int) -> None:
        with self._lock:
            if ms < self._now:
                raise ValueError(f"clock at {self._now} cannot go back to {ms}")
            self._now = int(ms)


class MonotonicClock:
    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def sleep(self, ms: float) -> None:
        time.sleep(ms / 1000.0)
