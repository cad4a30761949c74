"""Deterministic, clock-driven simulators of the experiment's device classes."""
from .beamline import CedarGas, MagnetUnit
from .elmb import ELMBBoard
from .faults import FaultEvent, FaultScriptError, parse_faults
from .hv import CommandRejected, HVChannel, HVChannelSettings, HVChannelState
from .plc import PLCUnit, RegulationLoop
from .sim import SIM_DT_MS, DeviceFleet, FleetRunner
from .spill import SpillRecord, SpillSource

__all__ = [
    "CedarGas", "MagnetUnit", "ELMBBoard", "FaultEvent", "FaultScriptError",
    "parse_faults", "CommandRejected", "HVChannel", "HVChannelSettings",
    "HVChannelState", "PLCUnit", "RegulationLoop", "DeviceFleet", "FleetRunner",
    "SIM_DT_MS", "SpillRecord", "SpillSource",
]
