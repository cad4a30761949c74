"""Dead-band archiving decisions.

A sample is stored when any of these holds:

* nothing stored yet for the path,
* the max-interval backstop elapsed (>= max_interval),
* numeric kinds: |value - last stored value| strictly exceeds the dead band,
* non-numeric kinds (or no dead band configured): the value changed.

Quality transitions are always stored regardless of the dead band, as
outage markers carrying a null value; the stateful gate resets its baseline
so the first sample after an outage is stored too.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..values import Quality, Value


@dataclass(frozen=True, slots=True)
class ArchivePolicy:
    max_interval_ms: int
    dead_band: float | None = None  # None: change-only for every kind

    def __post_init__(self):
        if self.max_interval_ms <= 0:
            raise ValueError("max_interval must be > 0")
        if self.dead_band is not None and self.dead_band < 0:
            raise ValueError("dead_band must be >= 0")


@dataclass(frozen=True, slots=True)
class ArchiveSample:
    path: str
    timestamp: int
    value: Value | None
    quality: Quality = Quality.VALID
    seq: int = -1  # assigned by the store on append


def _numeric_delta(a: Value, b: Value) -> float | None:
    """Max absolute elementwise difference, or None when not numeric."""
    if isinstance(a, bool) or isinstance(b, bool):
        return None
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(a - b)
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            return float("inf")
        worst = 0.0
        for x, y in zip(a, b):
            if isinstance(x, bool) or not isinstance(x, (int, float)) \
                    or isinstance(y, bool) or not isinstance(y, (int, float)):
                return None
            d = abs(x - y)
            if d > worst:
                worst = d
        return worst
    return None


def should_store(last_stored: ArchiveSample | None, incoming: ArchiveSample,
                 policy: ArchivePolicy) -> bool:
    """The dead-band rule for a valid incoming sample."""
    if last_stored is None:
        return True
    if incoming.timestamp - last_stored.timestamp >= policy.max_interval_ms:
        return True
    band = policy.dead_band
    if band is not None:
        a = incoming.value
        b = last_stored.value
        if type(a) is float and type(b) is float:  # the hot path
            return abs(a - b) > band
        delta = _numeric_delta(a, b)
        if delta is not None:
            return delta > band
    return incoming.value != last_stored.value


class DeadbandGate:
    """Per-path stateful filter: dead-band rule plus quality transitions."""

    __slots__ = ("policy", "last_stored", "last_quality", "last_stored_ts")

    def __init__(self, policy: ArchivePolicy):
        self.policy = policy
        self.last_stored: ArchiveSample | None = None
        self.last_quality = Quality.VALID
        self.last_stored_ts: int | None = None

    def offer(self, sample: ArchiveSample) -> ArchiveSample | None:
        """Return the sample to store (possibly a null-valued outage marker),
        or None when the sample is smoothed away. At most one stored sample
        per (path, timestamp)."""
        if self.last_stored_ts is not None and sample.timestamp <= self.last_stored_ts:
            return None
        if sample.quality is not Quality.VALID:
            if sample.quality is self.last_quality:
                return None
            # outage begins or changes flavor: marker stored, baseline reset
            self.last_quality = sample.quality
            self.last_stored = None
            self.last_stored_ts = sample.timestamp
            return ArchiveSample(sample.path, sample.timestamp, None, sample.quality)
        went_valid = self.last_quality is not Quality.VALID
        self.last_quality = Quality.VALID
        if went_valid or should_store(self.last_stored, sample, self.policy):
            self.last_stored = sample
            self.last_stored_ts = sample.timestamp
            return sample
        return None
