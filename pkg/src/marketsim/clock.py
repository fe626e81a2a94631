from __future__ import annotations

import math
import threading
import time


class SimClock:
    """Simulated time in seconds.

    With ``acceleration=math.inf`` the clock is fully virtual and only moves
    when :meth:`advance_to` is called. Otherwise simulated time tracks wall
    time scaled by ``acceleration``.
    """

    def __init__(self, start: float = 0.0, acceleration: float = math.inf):
        if acceleration <= 0:
            raise ValueError("acceleration must be positive")
        self.acceleration = acceleration
        self._start = start
        self._virtual_now = start
        self._wall0 = time.monotonic()
        self._lock = threading.Lock()

    @property
    def virtual(self) -> bool:
        return math.isinf(self.acceleration)

    def now(self) -> float:
        if self.virtual:
            return self._virtual_now
        return self._start + (time.monotonic() - self._wall0) * self.acceleration

    def advance_to(self, t: float) -> None:
        if not self.virtual:
            raise RuntimeError("cannot set a real-time clock")
        with self._lock:
            if t < self._virtual_now:
                raise ValueError("clock is monotone")
            self._virtual_now = t

    def sleep_until(self, t: float) -> None:
        """Block until simulated time reaches ``t`` (real-time mode only)."""
        if self.virtual:
            self.advance_to(max(t, self._virtual_now))
            return
        delay = (t - self.now()) / self.acceleration
        if delay > 0:
            time.sleep(delay)
