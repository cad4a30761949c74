"""Read-only beamline equipment: spectrometer magnets and CEDAR gas systems.

Magnets expose current, field and state; away from ON the field decays with
a 5 s time constant. CEDAR gas density drifts slowly downward until a refill
resets it (the alarm on the density band is configured recipe-side).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .. import states

FIELD_TAU_S = 5.0


@dataclass
class MagnetUnit:
    name: str
    nominal_current: float = 5000.0
    nominal_field: float = 1.0
    state: int = states.ON
    current: float = 0.0
    field: float = 0.0

    def __post_init__(self):
        if self.state == states.ON:
            self.current = self.nominal_current
            self.field = self.nominal_field

    def step(self, dt_ms: int) -> None:
        if self.state == states.ON:
            self.current = self.nominal_current
            self.field = self.nominal_field
        else:
            decay = math.exp(-dt_ms / 1000.0 / FIELD_TAU_S)
            self.current *= decay
            self.field *= decay

    def trip(self) -> None:
        self.state = states.TRIPPED

    def switch(self, on: bool) -> None:
        if on:
            self.state = states.ON
        elif self.state != states.TRIPPED:
            self.state = states.OFF


@dataclass
class CedarGas:
    name: str
    nominal_density: float = 1.05
    decay_per_s: float = 0.0002
    density: float = 0.0
    hv: float = 30.0
    motor_pos: float = 12.5

    def __post_init__(self):
        if self.density == 0.0:
            self.density = self.nominal_density

    def step(self, dt_ms: int) -> None:
        self.density = max(self.density - self.decay_per_s * dt_ms / 1000.0, 0.0)

    def refill(self) -> None:
        self.density = self.nominal_density

    def leak(self, factor: float = 50.0) -> None:
        """Fault injection: accelerate the loss rate."""
        self.decay_per_s *= factor
