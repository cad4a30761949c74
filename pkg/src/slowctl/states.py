"""Shared status encodings for device status leaves (int-kind datapoints)."""
from __future__ import annotations

OFF = 0
RAMPING_UP = 1
ON = 2
RAMPING_DOWN = 3
TRIPPED = 4

STATUS_NAMES = {
    OFF: "OFF",
    RAMPING_UP: "RAMPING_UP",
    ON: "ON",
    RAMPING_DOWN: "RAMPING_DOWN",
    TRIPPED: "TRIPPED",
}

STATUS_CODES = {name: code for code, name in STATUS_NAMES.items()}


def status_name(code: int) -> str:
    return STATUS_NAMES.get(code, f"UNKNOWN({code})")
