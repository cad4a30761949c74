"""Beam spill source: one record per supercycle with monotone spill numbers.

Each spill carries the beam flux, per-trigger counts and per-channel
calibration amplitudes for the calorimeters. Everything is drawn from a
seeded generator, so identical seeds give bit-identical spill streams.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SUPERCYCLE_MS = 40_000
NOMINAL_FLUX = 1.0e6


@dataclass
class SpillRecord:
    spill: int
    timestamp: int
    flux: float
    trigger_counts: dict[str, int]
    amplitudes: dict[str, list[float]]


@dataclass
class SpillSource:
    name: str
    seed: int
    supercycle_ms: int = DEFAULT_SUPERCYCLE_MS
    triggers: tuple[str, ...] = tuple(f"t{i}" for i in range(8))
    calo_channels: dict[str, int] = field(default_factory=dict)
    trigger_rate_per_flux: dict[str, float] = field(default_factory=dict)
    drift: dict[tuple[str, int], float] = field(default_factory=dict)
    zero_flux_spills: set[int] = field(default_factory=set)
    spill: int = 0
    _next_boundary: int | None = None

    def __post_init__(self):
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self._reference = {
            calo: 100.0 + 10.0 * np.sin(np.arange(n) * 0.1)
            for calo, n in self.calo_channels.items()
        }
        for i, t in enumerate(self.triggers):
            self.trigger_rate_per_flux.setdefault(t, 1e-3 / (i + 1))

    def reference_amplitudes(self, calo: str) -> list[float]:
        return [round(float(x), 6) for x in self._reference[calo]]

    def inject_drift(self, calo: str, channel: int, factor: float) -> None:
        self.drift[(calo, channel)] = factor

    def step(self, t_ms: int) -> SpillRecord | None:
        """Emit a record when the clock crossed a supercycle boundary."""
        if self._next_boundary is None:
            self._next_boundary = t_ms + self.supercycle_ms
            return None
        if t_ms < self._next_boundary:
            return None
        self._next_boundary += self.supercycle_ms
        self.spill += 1
        return self._emit(t_ms)

    def _emit(self, t_ms: int) -> SpillRecord:
        if self.spill in self.zero_flux_spills:
            flux = 0.0
        else:
            flux = float(NOMINAL_FLUX * self._rng.uniform(0.9, 1.1))
        counts = {}
        for trig in self.triggers:
            lam = max(self.trigger_rate_per_flux[trig] * flux, 0.0)
            counts[trig] = int(self._rng.poisson(lam)) if lam > 0 else 0
        amplitudes = {}
        for calo, ref in self._reference.items():
            noise = self._rng.normal(0.0, 0.05, size=ref.shape)
            amps = ref + noise
            for (c, ch), factor in self.drift.items():
                if c == calo and 0 <= ch < len(amps):
                    amps[ch] = ref[ch] * factor  # injected fault shows exactly
            amplitudes[calo] = [round(float(x), 6) for x in amps]
        return SpillRecord(self.spill, t_ms, flux, counts, amplitudes)
