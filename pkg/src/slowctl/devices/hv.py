"""High-voltage channel model: settings five-tuple and the live state machine.

Linear ramps toward the powered target, overcurrent accumulation into a
latched trip, and command handling (power, settings, clear). The current
monitor is a small deterministic model (leakage + voltage-proportional term)
with an injectable fault offset, since trips need something to trip on.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .. import states
from ..values import SlowControlError

ON_TOLERANCE_V = 1.0
LEAKAGE_UA = 0.05
UA_PER_VOLT = 0.002


class CommandRejected(SlowControlError):
    pass


@dataclass(frozen=True, slots=True)
class HVChannelSettings:
    v0set: float = 1500.0
    i0max: float = 10.0
    ramp_up: float = 100.0
    ramp_down: float = 150.0
    trip_time: float = 2.0  # seconds

    def __post_init__(self):
        for name in ("v0set", "i0max", "ramp_up", "ramp_down", "trip_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(slots=True)
class HVChannelState:
    vmon: float = 0.0
    imon: float = 0.0
    status: int = states.OFF
    overcurrent_since: int | None = None  # ms


@dataclass
class HVChannel:
    name: str
    settings: HVChannelSettings = field(default_factory=HVChannelSettings)
    state: HVChannelState = field(default_factory=HVChannelState)
    power: bool = False
    imon_fault_ua: float = 0.0  # injected overcurrent offset
    trip_count: int = 0

    def step(self, t_ms: int, dt_ms: int) -> HVChannelState:
        """Advance by dt; total function, never raises."""
        s = self.state
        dt = dt_ms / 1000.0
        tripped = s.status == states.TRIPPED
        target = self.settings.v0set if (self.power and not tripped) else 0.0
        rate = self.settings.ramp_up if target > s.vmon else self.settings.ramp_down
        step_v = rate * dt
        if s.vmon < target:
            s.vmon = min(s.vmon + step_v, target)
        elif s.vmon > target:
            s.vmon = max(s.vmon - step_v, target, 0.0)

        s.imon = LEAKAGE_UA + UA_PER_VOLT * s.vmon + self.imon_fault_ua

        if not tripped:
            if s.imon > self.settings.i0max:
                if s.overcurrent_since is None:
                    s.overcurrent_since = t_ms
                elif t_ms - s.overcurrent_since >= self.settings.trip_time * 1000:
                    self._trip()
                    tripped = True
            else:
                s.overcurrent_since = None

        if tripped:
            s.status = states.TRIPPED
        elif not self.power:
            s.status = states.RAMPING_DOWN if s.vmon > 0 else states.OFF
        elif abs(s.vmon - self.settings.v0set) <= ON_TOLERANCE_V:
            s.status = states.ON
        else:
            s.status = states.RAMPING_UP if s.vmon < self.settings.v0set else states.RAMPING_DOWN
        return s

    def _trip(self) -> None:
        self.state.status = states.TRIPPED
        self.power = False  # power bit latches off until cleared
        self.trip_count += 1

    # -- commands ------------------------------------------------------------

    def switch(self, on: bool) -> None:
        if on and self.state.status == states.TRIPPED:
            raise CommandRejected(f"{self.name}: tripped, clear before switching on")
        self.power = on

    def clear(self) -> None:
        if self.state.status != states.TRIPPED:
            return  # clearing a healthy channel is a no-op
        self.state.status = states.RAMPING_DOWN if self.state.vmon > 0 else states.OFF
        self.state.overcurrent_since = None

    def apply_setting(self, name: str, value: float) -> None:
        if name not in ("v0set", "i0max", "rup", "rdwn", "trip"):
            raise CommandRejected(f"unknown HV setting {name!r}")
        field_name = {"v0set": "v0set", "i0max": "i0max", "rup": "ramp_up",
                      "rdwn": "ramp_down", "trip": "trip_time"}[name]
        if value < 0:
            raise CommandRejected(f"{name} must be >= 0")
        self.settings = replace(self.settings, **{field_name: float(value)})

    def setting(self, name: str) -> float:
        field_name = {"v0set": "v0set", "i0max": "i0max", "rup": "ramp_up",
                      "rdwn": "ramp_down", "trip": "trip_time"}[name]
        return getattr(self.settings, field_name)
