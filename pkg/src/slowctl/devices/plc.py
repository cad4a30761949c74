"""Autonomous regulator: loops settle first-order onto their setpoints and a
watchdog counter increments every scan cycle, wrapping at the 32-bit signed
maximum (monitors treat any change as proof of life)."""
from __future__ import annotations

from dataclasses import dataclass, field

WATCHDOG_WRAP = 2**31 - 1
DEFAULT_RATE = 0.2  # first-order fraction closed per scan


@dataclass(slots=True)
class RegulationLoop:
    name: str
    setpoint: float
    tolerance: float
    actual: float = 0.0
    rate: float = DEFAULT_RATE

    @property
    def in_regulation(self) -> bool:
        return abs(self.actual - self.setpoint) <= self.tolerance


@dataclass
class PLCUnit:
    name: str
    loops: dict[str, RegulationLoop] = field(default_factory=dict)
    watchdog: int = 0
    frozen: bool = False  # fault injection: a frozen PLC stops scanning

    def add_loop(self, name: str, setpoint: float, tolerance: float,
                 rate: float = DEFAULT_RATE) -> RegulationLoop:
        loop = RegulationLoop(name, setpoint, tolerance, actual=setpoint, rate=rate)
        self.loops[name] = loop
        return loop

    def scan(self) -> None:
        if self.frozen:
            return
        for loop in self.loops.values():
            loop.actual += (loop.setpoint - loop.actual) * loop.rate
        self.watchdog = 0 if self.watchdog >= WATCHDOG_WRAP else self.watchdog + 1

    def set_setpoint(self, loop_name: str, value: float) -> None:
        self.loops[loop_name].setpoint = value
