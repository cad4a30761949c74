"""Liveness monitoring: heart-beats, watchdogs, equipment timestamps and
gateway pings.

A monitor whose timeout expires flips to DEAD: every item fed by the watched
target is quality-degraded (PLC watchdogs invalidate, everything else goes
stale) and a WARNING alert is raised through the alarm engine. While a PLC
watchdog is DEAD, fresh updates from that PLC keep arriving with frozen
logic values; they are force-marked invalid until the counter moves again.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable

from ..values import Quality

PLC_WATCHDOG_TIMEOUT_MS = 10_000
EQUIPMENT_TIMEOUT_MS = 15_000
HEARTBEAT_TIMEOUT_MS = 15_000
GATEWAY_PING_PERIOD_MS = 900_000  # fifteen minutes


@dataclass
class Monitor:
    monitor_id: str
    kind: str                 # watchdog_value | equipment_ts | heartbeat | gateway
    watch: str                # item path, service prefix, or host
    timeout_ms: int
    affected_prefix: str | None = None
    degrade_to: Quality = Quality.STALE
    last_evidence: int | None = None
    last_value: object = None
    alive: bool = True


class LivenessBank:
    def __init__(self, clock, on_verdict: Callable[[Monitor, bool], None] | None = None,
                 ping_fn: Callable[[str], bool] | None = None):
        self.clock = clock
        self._on_verdict = on_verdict or (lambda m, alive: None)
        self._ping_fn = ping_fn
        self._monitors: list[Monitor] = []
        self._by_watch_value: dict[str, Monitor] = {}
        self._prefix_monitors: list[Monitor] = []
        self._gateways: list[Monitor] = []
        self._prefix_cache: dict[str, tuple[Monitor, ...]] = {}  # per-path, hot
        self._dead_invalid: list[Monitor] = []  # DEAD monitors that invalidate
        self._lock = threading.RLock()
        self._next_gateway_ping: int | None = None

    def add_watchdog(self, monitor_id: str, item_path: str, affected_prefix: str,
                     timeout_ms: int = PLC_WATCHDOG_TIMEOUT_MS) -> Monitor:
        """Varying-integer watchdog: any change of value counts as life
        (wrap included); the fed items are marked invalid on expiry."""
        m = Monitor(monitor_id, "watchdog_value", item_path, timeout_ms,
                    affected_prefix, degrade_to=Quality.INVALID)
        with self._lock:
            self._monitors.append(m)
            self._by_watch_value[item_path] = m
        return m

    def add_equipment(self, monitor_id: str, service_prefix: str,
                      timeout_ms: int = EQUIPMENT_TIMEOUT_MS) -> Monitor:
        """Timestamp staleness: any update under the prefix proves life."""
        m = Monitor(monitor_id, "equipment_ts", service_prefix, timeout_ms,
                    service_prefix, degrade_to=Quality.STALE)
        with self._lock:
            self._monitors.append(m)
            self._prefix_monitors.append(m)
            self._prefix_cache.clear()
        return m

    def add_heartbeat(self, monitor_id: str, heartbeat_item: str, affected_prefix: str,
                      timeout_ms: int = HEARTBEAT_TIMEOUT_MS) -> Monitor:
        m = Monitor(monitor_id, "heartbeat", heartbeat_item, timeout_ms,
                    affected_prefix, degrade_to=Quality.STALE)
        with self._lock:
            self._monitors.append(m)
            self._by_watch_value[heartbeat_item] = m
        return m

    def add_gateway(self, monitor_id: str, host: str,
                    period_ms: int = GATEWAY_PING_PERIOD_MS) -> Monitor:
        m = Monitor(monitor_id, "gateway", host, period_ms)
        with self._lock:
            self._monitors.append(m)
            self._gateways.append(m)
        return m

    def monitors(self) -> list[Monitor]:
        with self._lock:
            return list(self._monitors)

    # -- evidence ---------------------------------------------------------------

    def observe(self, path: str, value, now_ms: int) -> None:
        """Feed one arriving update into the relevant monitors."""
        with self._lock:
            m = self._by_watch_value.get(path)
            if m is not None:
                if m.kind == "watchdog_value":
                    if m.last_value is None or value != m.last_value:
                        m.last_value = value
                        m.last_evidence = now_ms
                else:  # heartbeat: the value IS the last-meaningful-data ts
                    if m.last_evidence is None or value != m.last_value:
                        m.last_value = value
                        m.last_evidence = now_ms
            matched = self._prefix_cache.get(path)
            if matched is None:
                matched = tuple(pm for pm in self._prefix_monitors
                                if path.startswith(pm.watch + "/"))
                self._prefix_cache[path] = matched
            for pm in matched:
                pm.last_evidence = now_ms

    def quality_override(self, path: str) -> Quality | None:
        """While a watchdog is DEAD, values it feeds are forced invalid."""
        if not self._dead_invalid:  # the hot path: nothing is dead
            return None
        with self._lock:
            for m in self._dead_invalid:
                if path.startswith(m.affected_prefix + "/") and path != m.watch:
                    return Quality.INVALID
        return None

    # -- verdicts ------------------------------------------------------------------

    def check(self, now_ms: int) -> list[tuple[Monitor, bool]]:
        """Evaluate every monitor; returns (monitor, alive) for transitions.
        The on_verdict callback fires for each transition."""
        transitions = []
        with self._lock:
            for m in self._monitors:
                if m.kind == "gateway":
                    continue
                if m.last_evidence is None:
                    continue  # never fed yet: no verdict until first evidence
                alive = now_ms - m.last_evidence <= m.timeout_ms
                if alive != m.alive:
                    m.alive = alive
                    transitions.append((m, alive))
                    if m.degrade_to is Quality.INVALID and m.affected_prefix:
                        if not alive and m not in self._dead_invalid:
                            self._dead_invalid.append(m)
                        elif alive and m in self._dead_invalid:
                            self._dead_invalid.remove(m)
        for m, alive in transitions:
            self._on_verdict(m, alive)
        return transitions

    def ping_gateways(self, now_ms: int, force: bool = False) -> list[tuple[Monitor, bool]]:
        """Issue the periodic gateway pings when due; returns transitions."""
        if self._ping_fn is None:
            return []
        with self._lock:
            gateways = list(self._gateways)
            if not force:
                if self._next_gateway_ping is None:
                    self._next_gateway_ping = now_ms + GATEWAY_PING_PERIOD_MS
                    return []
                if now_ms < self._next_gateway_ping:
                    return []
                self._next_gateway_ping += GATEWAY_PING_PERIOD_MS
        transitions = []
        for m in gateways:
            alive = bool(self._ping_fn(m.watch))
            m.last_evidence = now_ms
            if alive != m.alive:
                m.alive = alive
                transitions.append((m, alive))
                self._on_verdict(m, alive)
        return transitions
