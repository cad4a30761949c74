"""Alarm engine: band evaluation, came/went/acknowledge lifecycle, per-subsystem
summary rollup and notification dispatch.

Severity ordering is OK < WARNING < ERROR < FATAL. Bands are half-open
[lo, hi) intervals that must partition the whole numeric domain with exactly
one OK band. Values whose quality is not valid never change alarm state.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable

from .values import Quality, SlowControlError, Value

logger = logging.getLogger(__name__)

NOTIFY_RATE_LIMIT_MS = 300_000  # at most one dispatch per path per 5 minutes
NOTIFY_RETRIES = 3


class Severity(IntEnum):
    OK = 0
    WARNING = 1
    ERROR = 2
    FATAL = 3


#: UI color contract, fixed here so every surface agrees.
SEVERITY_COLORS = {Severity.OK: "green", Severity.WARNING: "yellow",
                   Severity.ERROR: "red", Severity.FATAL: "flashing-red"}


class AlarmConfigError(SlowControlError):
    pass


class RecordNotFound(SlowControlError):
    pass


@dataclass(frozen=True, slots=True)
class Band:
    lo: float
    hi: float
    severity: Severity


@dataclass(frozen=True)
class AlertConfig:
    """Threshold bands for a numeric leaf, or a flag trigger for a boolean."""

    target: str
    bands: tuple[Band, ...] = ()
    ack_required: bool = False
    flag_severity: Severity | None = None
    hysteresis: float = 0.0  # optional dead band on band edges, off by default

    def __post_init__(self):
        if self.flag_severity is not None:
            return
        if not self.bands:
            raise AlarmConfigError(f"{self.target}: no bands")
        ordered = sorted(self.bands, key=lambda b: b.lo)
        if ordered[0].lo != float("-inf") or ordered[-1].hi != float("inf"):
            raise AlarmConfigError(f"{self.target}: bands do not cover the domain")
        for a, b in zip(ordered, ordered[1:]):
            if a.hi != b.lo:
                raise AlarmConfigError(f"{self.target}: gap or overlap at {a.hi}")
        if sum(1 for b in self.bands if b.severity is Severity.OK) != 1:
            raise AlarmConfigError(f"{self.target}: exactly one OK band required")

    def classify(self, value: Value) -> Severity | None:
        """Raw band lookup; None signals a config bug (unreachable for a
        well-formed partition, e.g. NaN input)."""
        if self.flag_severity is not None:
            return self.flag_severity if value else Severity.OK
        for b in self.bands:
            if b.lo <= value < b.hi:
                return b.severity
        return None

    def band_of(self, severity: Severity, value: Value) -> Band | None:
        for b in self.bands:
            if b.severity is severity and b.lo <= value < b.hi:
                return b
        return None


def bands_from_limits(ok: tuple[float, float], warning: tuple[float, float],
                      fatal: tuple[float, float] | None = None) -> tuple[Band, ...]:
    """Nested limits to a partition: OK inside `ok`, WARNING inside `warning`,
    ERROR outside (FATAL outside `fatal` when given). Degenerate empty bands
    are dropped."""
    inf = float("inf")
    ok_lo, ok_hi = ok
    w_lo, w_hi = min(warning[0], ok_lo), max(warning[1], ok_hi)
    pieces = []
    if fatal is not None:
        f_lo, f_hi = min(fatal[0], w_lo), max(fatal[1], w_hi)
        pieces += [(-inf, f_lo, Severity.FATAL), (f_lo, w_lo, Severity.ERROR),
                   (w_hi, f_hi, Severity.ERROR), (f_hi, inf, Severity.FATAL)]
    else:
        pieces += [(-inf, w_lo, Severity.ERROR), (w_hi, inf, Severity.ERROR)]
    pieces += [(w_lo, ok_lo, Severity.WARNING), (ok_hi, w_hi, Severity.WARNING),
               (ok_lo, ok_hi, Severity.OK)]
    bands = tuple(Band(lo, hi, sev) for lo, hi, sev in pieces if lo < hi)
    return tuple(sorted(bands, key=lambda b: b.lo))


@dataclass
class AlertRecord:
    record_id: int
    path: str
    severity: Severity
    value_at_came: Value
    came_at: int
    ack_required: bool = False
    went_at: int | None = None
    acknowledged_at: int | None = None
    acknowledged_by: str | None = None

    @property
    def active(self) -> bool:
        return self.went_at is None

    @property
    def requires_attention(self) -> bool:
        """Listed until gone, and for ack-required alerts also acknowledged."""
        return self.active or (self.ack_required and self.acknowledged_at is None)

    def to_dict(self) -> dict:
        return {"record_id": self.record_id, "path": self.path,
                "severity": self.severity.name, "value_at_came": self.value_at_came,
                "came_at": self.came_at, "went_at": self.went_at,
                "ack_required": self.ack_required,
                "acknowledged_at": self.acknowledged_at,
                "acknowledged_by": self.acknowledged_by,
                "active": self.active, "requires_attention": self.requires_attention}


@dataclass(frozen=True, slots=True)
class AlarmEvent:
    kind: str  # CAME | SEVERITY_CHANGED | WENT | ACK | CONFIG_ERROR
    path: str
    severity: Severity
    record_id: int
    timestamp: int
    value: Value = None


class AlreadyAcknowledged(SlowControlError):
    def __init__(self, record: AlertRecord):
        super().__init__(f"record {record.record_id} already acknowledged "
                         f"by {record.acknowledged_by}")
        self.record = record


class AlarmEngine:
    """Per-path severity tracking. Evaluation for one path is serialized by
    the engine lock; the event log provides the total event order."""

    def __init__(self, detector_of: Callable[[str], str] | None = None,
                 event_log=None, on_event: Callable[[AlarmEvent, AlertRecord | None], None] | None = None):
        self._lock = threading.RLock()
        self._configs: dict[str, AlertConfig] = {}
        self._current: dict[str, Severity] = {}
        self._active: dict[str, AlertRecord] = {}
        self._records: dict[int, AlertRecord] = {}
        self._next_id = 1
        self._detector_of = detector_of or (lambda p: p.split("/", 1)[0])
        self._event_log = event_log
        self._on_event = on_event
        self._summary: dict[str, dict[Severity, int]] = {}

    # -- configuration -------------------------------------------------------

    def set_config(self, path: str, config: AlertConfig) -> None:
        with self._lock:
            self._configs[path] = config

    def config_for(self, path: str) -> AlertConfig | None:
        return self._configs.get(path)

    @property
    def config_count(self) -> int:
        return len(self._configs)

    def replace_configs(self, configs: dict[str, AlertConfig],
                        read_value: Callable[[str], tuple[Value, int, Quality] | None] | None = None,
                        ) -> list[AlarmEvent]:
        """Install a batch of configs atomically (recipe commit) and re-run
        evaluation against the current values right away. Committing an
        identical batch twice yields zero new events."""
        for path, config in configs.items():
            if not isinstance(config, AlertConfig):
                raise AlarmConfigError(f"{path}: not an AlertConfig")
        events: list[AlarmEvent] = []
        with self._lock:
            self._configs.update(configs)
            if read_value is not None:
                for path in configs:
                    current = read_value(path)
                    if current is None:
                        continue
                    value, ts, quality = current
                    if quality is Quality.VALID:
                        events.extend(self._evaluate_locked(path, value, ts, self._configs[path]))
        return events

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, path: str, value: Value, timestamp: int,
                 quality: Quality = Quality.VALID) -> list[AlarmEvent]:
        """Apply one valid value; returns the lifecycle events it caused."""
        if quality is not Quality.VALID:
            return []
        config = self._configs.get(path)
        if config is None:
            return []
        with self._lock:
            return self._evaluate_locked(path, value, timestamp, config)

    def _evaluate_locked(self, path, value, timestamp, config) -> list[AlarmEvent]:
        events: list[AlarmEvent] = []
        old = self._current.get(path, Severity.OK)
        new = config.classify(value)
        if new is None:
            new = Severity.FATAL
            events.append(self._emit("CONFIG_ERROR", path, new, 0, timestamp, value))
        elif config.hysteresis > 0 and new is not old:
            held = config.band_of(old, value)  # still inside the old band?
            if held is None:
                for b in config.bands:
                    if b.severity is old and b.lo - config.hysteresis <= value < b.hi + config.hysteresis:
                        new = old
                        break
        if new is old:
            return events
        self._current[path] = new
        if old is Severity.OK:
            record = AlertRecord(self._next_id, path, new, value, timestamp,
                                 ack_required=config.ack_required)
            self._next_id += 1
            self._records[record.record_id] = record
            self._active[path] = record
            self._bump_summary(path, None, new)
            events.append(self._emit("CAME", path, new, record.record_id, timestamp, value))
        elif new is Severity.OK:
            record = self._active.pop(path)
            record.went_at = timestamp
            self._bump_summary(path, record.severity, None)
            events.append(self._emit("WENT", path, new, record.record_id, timestamp, value))
        else:
            record = self._active[path]
            self._bump_summary(path, record.severity, new)
            record.severity = new
            events.append(self._emit("SEVERITY_CHANGED", path, new, record.record_id,
                                     timestamp, value))
        return events

    def _emit(self, kind, path, severity, record_id, timestamp, value) -> AlarmEvent:
        ev = AlarmEvent(kind, path, severity, record_id, timestamp, value)
        if self._event_log is not None:
            payload = value if not isinstance(value, list) else None
            self._event_log.append({"type": kind, "path": path, "severity": severity.name,
                                    "record_id": record_id, "ts": timestamp, "value": payload})
        if self._on_event is not None:
            self._on_event(ev, self._records.get(record_id))
        return ev

    # -- acknowledgment ---------------------------------------------------------

    def acknowledge(self, record_id: int, user: str, timestamp: int) -> AlertRecord:
        """Idempotent: a second acknowledgment returns the record unchanged."""
        with self._lock:
            record = self._records.get(record_id)
            if record is None:
                raise RecordNotFound(str(record_id))
            if record.acknowledged_at is None:
                record.acknowledged_at = timestamp
                record.acknowledged_by = user
                self._emit("ACK", record.path, record.severity, record_id, timestamp, None)
            return record

    def acknowledge_racing(self, record_id: int, user: str, timestamp: int) -> AlertRecord:
        """Ack that surfaces the race: exactly one caller wins, later callers
        get AlreadyAcknowledged naming the winner."""
        with self._lock:
            record = self._records.get(record_id)
            if record is None:
                raise RecordNotFound(str(record_id))
            if record.acknowledged_at is not None:
                raise AlreadyAcknowledged(record)
            return self.acknowledge(record_id, user, timestamp)

    # -- queries -------------------------------------------------------------------

    def record(self, record_id: int) -> AlertRecord:
        with self._lock:
            record = self._records.get(record_id)
            if record is None:
                raise RecordNotFound(str(record_id))
            return record

    def active_alerts(self) -> list[AlertRecord]:
        with self._lock:
            return sorted(self._active.values(), key=lambda r: (-r.severity, r.came_at))

    def attention_list(self) -> list[AlertRecord]:
        with self._lock:
            return sorted((r for r in self._records.values() if r.requires_attention),
                          key=lambda r: (-r.severity, r.came_at))

    def severity_of(self, path: str) -> Severity:
        with self._lock:
            return self._current.get(path, Severity.OK)

    # -- summary rollup -----------------------------------------------------------

    def _bump_summary(self, path: str, old: Severity | None, new: Severity | None) -> None:
        det = self._detector_of(path)
        counts = self._summary.setdefault(det, {})
        if old is not None:
            counts[old] = counts.get(old, 0) - 1
            if counts[old] <= 0:
                del counts[old]
        if new is not None:
            counts[new] = counts.get(new, 0) + 1

    def summary(self) -> dict[str, tuple[Severity, int]]:
        """Per-subsystem worst active severity and active-alert count."""
        with self._lock:
            out = {}
            for det, counts in self._summary.items():
                total = sum(counts.values())
                worst = max(counts) if counts else Severity.OK
                out[det] = (worst if total else Severity.OK, total)
            return out

    def recompute_summary(self) -> dict[str, tuple[Severity, int]]:
        """From-scratch rollup over active records (the property-test twin
        of the incrementally maintained summary)."""
        with self._lock:
            fresh: dict[str, list[Severity]] = {}
            for record in self._active.values():
                fresh.setdefault(self._detector_of(record.path), []).append(record.severity)
            return {det: (max(sevs), len(sevs)) for det, sevs in fresh.items()}


class NotificationDispatcher:
    """Expert notification with retries and per-path rate limiting.

    The sink is pluggable: (record dict, recipient) -> None, raising on
    failure. The default sink appends JSON lines to a log file.
    """

    def __init__(self, clock, sink: Callable[[dict, str], None],
                 experts_for: Callable[[str], list[str]],
                 threshold_for: Callable[[str], Severity] | None = None,
                 detector_of: Callable[[str], str] | None = None):
        self._clock = clock
        self._sink = sink
        self._experts_for = experts_for
        self._threshold_for = threshold_for or (lambda det: Severity.ERROR)
        self._detector_of = detector_of or (lambda p: p.split("/", 1)[0])
        self._last_dispatch: dict[str, int] = {}
        self._lock = threading.Lock()
        self.delivered = 0
        self.undelivered = 0
        self.suppressed = 0

    def on_event(self, event: AlarmEvent, record: AlertRecord | None) -> None:
        if event.kind not in ("CAME", "SEVERITY_CHANGED"):
            return
        detector = self._detector_of(event.path)
        if event.severity < self._threshold_for(detector):
            return
        now = self._clock.now_ms()
        with self._lock:
            last = self._last_dispatch.get(event.path)
            if last is not None and now - last < NOTIFY_RATE_LIMIT_MS:
                self.suppressed += 1
                return
            self._last_dispatch[event.path] = now
        payload = record.to_dict() if record is not None else {"path": event.path,
                                                               "severity": event.severity.name}
        payload["event"] = event.kind
        for expert in self._experts_for(detector):
            self._deliver(payload, expert)

    def _deliver(self, payload: dict, recipient: str) -> None:
        for attempt in range(NOTIFY_RETRIES):
            try:
                self._sink(payload, recipient)
                self.delivered += 1
                return
            except Exception as exc:
                logger.warning("notification to %s failed (attempt %d): %s",
                               recipient, attempt + 1, exc)
        self.undelivered += 1
        logger.error("notification to %s undelivered after %d attempts",
                     recipient, NOTIFY_RETRIES)


def file_sink(path) -> Callable[[dict, str], None]:
    """Default notification sink: JSON lines appended to `path`."""
    import json

    def sink(payload: dict, recipient: str) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"to": recipient, **payload}, separators=(",", ":")) + "\n")

    return sink
