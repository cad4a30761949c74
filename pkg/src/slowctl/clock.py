"""Clocks: one shared time domain per deployment, in int milliseconds.

Three implementations cover the run modes the stack needs:

* SystemClock  -- wall time, for normal operation.
* ScaledClock  -- wall time rescaled by a speed factor and re-anchored, so a
  whole deployment (sim, registry, supervisor) runs e.g. 20x fast while every
  period, timeout and timestamp stays coherent.
* ManualClock  -- time advances only when a test says so; sleepers block on a
  condition variable. Deterministic discrete-event runs.
"""
from __future__ import annotations

import threading
import time


class SystemClock:
    speed = 1.0

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep_until(self, t_ms: int, stop: threading.Event | None = None) -> None:
        while True:
            dt = (t_ms - self.now_ms()) / 1000.0
            if dt <= 0:
                return
            if stop is not None:
                if stop.wait(dt):
                    return
            else:
                time.sleep(dt)

    def sleep(self, dt_ms: int, stop: threading.Event | None = None) -> None:
        self.sleep_until(self.now_ms() + dt_ms, stop)


class ScaledClock(SystemClock):
    """now = anchor + speed * (wall - anchor_wall). Sleeps shrink by the same
    factor. Distinct processes given the same anchor share one time domain:
    the anchor names both the domain time and the wall epoch it maps to."""

    def __init__(self, speed: float = 1.0, anchor_ms: int | None = None,
                 anchor_wall_ms: int | None = None):
        if speed <= 0:
            raise ValueError("speed must be > 0")
        self.speed = float(speed)
        now_wall = int(time.time() * 1000)
        self._anchor = anchor_ms if anchor_ms is not None else now_wall
        self._anchor_wall = anchor_wall_ms if anchor_wall_ms is not None else \
            (anchor_ms if anchor_ms is not None else now_wall)

    def now_ms(self) -> int:
        return self._anchor + int((time.time() * 1000 - self._anchor_wall) * self.speed)

    def sleep_until(self, t_ms: int, stop: threading.Event | None = None) -> None:
        while True:
            dt = (t_ms - self.now_ms()) / 1000.0 / self.speed
            if dt <= 0:
                return
            if stop is not None:
                if stop.wait(dt):
                    return
            else:
                time.sleep(dt)


class ManualClock:
    """Test clock: now_ms is fixed until advance()/set() moves it."""

    speed = 1.0

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._cond = threading.Condition()

    def now_ms(self) -> int:
        with self._cond:
            return self._now

    def advance(self, dt_ms: int) -> int:
        with self._cond:
            self._now += dt_ms
            self._cond.notify_all()
            return self._now

    def set(self, t_ms: int) -> None:
        with self._cond:
            if t_ms < self._now:
                raise ValueError("manual clock cannot go backwards")
            self._now = t_ms
            self._cond.notify_all()

    def sleep_until(self, t_ms: int, stop: threading.Event | None = None) -> None:
        with self._cond:
            while self._now < t_ms:
                if stop is not None and stop.is_set():
                    return
                # Poll the stop event; manual advances notify immediately.
                self._cond.wait(0.05)

    def sleep(self, dt_ms: int, stop: threading.Event | None = None) -> None:
        self.sleep_until(self.now_ms() + dt_ms, stop)
