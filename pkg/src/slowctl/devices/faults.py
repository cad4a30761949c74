"""Fault-injection scripts for deterministic scenario runs.

Line grammar (seconds are sim-time, relative to run start):

    t=<sec> trip magnet <name>
    t=<sec> overcurrent <hv-channel-path-or-alias> [<uA>]
    t=<sec> overtemp <elmb-channel-path> [<degC>]
    t=<sec> freeze plc <service>
    t=<sec> freeze vme <service>
    t=<sec> refill cedar <service>
    t=<sec> leak cedar <service> [<factor>]
    t=<sec> drift calo <calo> <channel> <factor>
    t=<sec> zeroflux beam [<spill-count>]
    t=<sec> setpoint <service> <loop> <value>

`#` comments and blank lines are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..values import SlowControlError


class FaultScriptError(SlowControlError):
    pass


@dataclass(frozen=True, slots=True)
class FaultEvent:
    t_ms: int
    action: str
    args: tuple[str, ...]


ACTIONS = {"trip", "overcurrent", "overtemp", "freeze", "refill", "leak",
           "drift", "zeroflux", "setpoint"}


def parse_faults(text: str) -> list[FaultEvent]:
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if not fields[0].startswith("t="):
            raise FaultScriptError(f"line {lineno}: expected t=<sec>, got {raw!r}")
        try:
            t_ms = round(float(fields[0][2:]) * 1000)
        except ValueError as exc:
            raise FaultScriptError(f"line {lineno}: bad time in {raw!r}") from exc
        if len(fields) < 2 or fields[1] not in ACTIONS:
            raise FaultScriptError(f"line {lineno}: unknown action in {raw!r}")
        events.append(FaultEvent(t_ms, fields[1], tuple(fields[2:])))
    return sorted(events, key=lambda e: e.t_ms)
