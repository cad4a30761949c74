"""Multiplexed 64-channel 16-bit ADC board with per-channel calibration.

code = clamp(round(raw / range * 65535), 0, 65535); the engineering value is
gain * measured_voltage + offset, with measured_voltage the range-clamped
input (the quantized code is the parallel digital reading).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..values import SlowControlError

N_CHANNELS = 64
ADC_MAX = 65535


class ChannelRangeError(SlowControlError):
    pass


@dataclass
class ELMBBoard:
    name: str
    adc_range: float = 5.0
    gain: float = 1.0
    offset: float = 0.0
    sources: list[float] = field(default_factory=lambda: [0.0] * N_CHANNELS)
    overrides: dict[int, float] = field(default_factory=dict)

    def set_source(self, channel: int, volts: float) -> None:
        self._check(channel)
        self.sources[channel] = volts

    def override(self, channel: int, volts: float) -> None:
        """Fault injection: pin the channel input regardless of its source."""
        self._check(channel)
        self.overrides[channel] = volts

    def read(self, channel: int) -> tuple[int, float]:
        """(16-bit code, engineering value) for one input channel."""
        self._check(channel)
        raw = self.overrides.get(channel, self.sources[channel])
        clamped = min(max(raw, 0.0), self.adc_range)
        code = min(max(round(raw / self.adc_range * ADC_MAX), 0), ADC_MAX)
        return code, self.gain * clamped + self.offset

    def volts_for(self, engineering: float) -> float:
        """Inverse calibration, used to inject faults in engineering units."""
        return (engineering - self.offset) / self.gain

    def _check(self, channel: int) -> None:
        if not 0 <= channel < N_CHANNELS:
            raise ChannelRangeError(f"{self.name}: channel {channel} out of range 0..63")
