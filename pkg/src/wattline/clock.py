"""Injectable millisecond clocks.

Every component that reads time or sleeps takes a clock so that the whole
measurement chain (plug simulator, sampler, offset probes) can run against
a shared virtual clock in tests: wall-hours of sampling execute instantly
and tick timing is exact instead of jittery.
"""

from __future__ import annotations

import threading
import time


class Clock:
    """Interface: unix-epoch milliseconds plus a matching sleep."""

    def now_ms(self) -> int:
        raise NotImplementedError

    def sleep_ms(self, duration_ms: float) -> None:
        raise NotImplementedError


class SystemClock(Clock):
    """Real wall clock."""

    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000

    def sleep_ms(self, duration_ms: float) -> None:
        if duration_ms > 0:
            time.sleep(duration_ms / 1000.0)


class SimulatedClock(Clock):
    """Manually advanced clock; sleeping advances it instantly.

    Thread-safe: a server thread may read `now_ms` while the driving
    thread sleeps forward.
    """

    def __init__(self, start_ms: int = 0):
        self._now_ms = int(start_ms)
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return self._now_ms

    def sleep_ms(self, duration_ms: float) -> None:
        if duration_ms > 0:
            with self._lock:
                self._now_ms += int(round(duration_ms))

    def advance_ms(self, duration_ms: int) -> None:
        self.sleep_ms(duration_ms)
