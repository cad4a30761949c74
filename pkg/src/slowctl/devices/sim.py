"""The simulated device fleet: every DEVICE record in the fleet manifest
becomes a clock-driven service publishing typed, timestamped values.

Determinism: device generators are seeded from the master seed and the
service name, and all dynamics are fixed-step, so one (seed, manifest,
fault script) triple always produces bit-identical update streams.
"""
from __future__ import annotations

import math
import threading
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .. import states
from ..fleet import HV_DEFAULTS, DeviceSpec, Manifest
from ..values import Kind, Quality, SlowControlError, Update
from .beamline import CedarGas, MagnetUnit
from .elmb import ELMBBoard
from .faults import FaultEvent
from .hv import CommandRejected, HVChannel, HVChannelSettings
from .plc import PLCUnit
from .spill import SpillSource

SIM_DT_MS = 100


def _device_seed(master: int, service: str) -> int:
    return master ^ zlib.crc32(service.encode())


class SimDevice:
    """Base: a service with typed items, a read period and optional commands."""

    read_only = False
    read_period_ms = 1_000

    def __init__(self, service: str):
        self.service = service
        self._next_read = None

    def items(self) -> list[tuple[str, Kind]]:
        raise NotImplementedError

    def read(self, t_ms: int) -> list[Update]:
        raise NotImplementedError

    def advance(self, t_ms: int, dt_ms: int) -> None:
        """Advance internal dynamics; called every sim step."""

    def step(self, t_ms: int, dt_ms: int) -> list[Update]:
        self.advance(t_ms, dt_ms)
        if self._next_read is None or t_ms >= self._next_read:
            self._next_read = (t_ms if self._next_read is None else self._next_read) \
                + self.read_period_ms
            return self.read(t_ms)
        return []

    def command(self, path: str, value) -> str:
        raise CommandRejected(f"{self.service}: no commandable item {path}")


class HVCrateDevice(SimDevice):
    read_period_ms = SIM_DT_MS  # fast cycle: trips must surface quickly

    def __init__(self, spec: DeviceSpec):
        super().__init__(spec.service)
        n = spec.get_int("channels", 12)
        settings = HVChannelSettings(
            v0set=spec.get_float("v0set", HV_DEFAULTS["v0set"]),
            i0max=spec.get_float("i0max", HV_DEFAULTS["i0max"]),
            ramp_up=spec.get_float("rup", HV_DEFAULTS["rup"]),
            ramp_down=spec.get_float("rdwn", HV_DEFAULTS["rdwn"]),
            trip_time=spec.get_float("trip", HV_DEFAULTS["trip"]))
        self.channels = {f"ch{i:03d}": HVChannel(f"{self.service}/ch{i:03d}", settings)
                         for i in range(n)}
        if spec.get("power", "off") == "on":
            for channel in self.channels.values():
                channel.switch(True)

    def items(self):
        out = []
        for ch in self.channels:
            base = f"{self.service}/{ch}"
            out += [(f"{base}/vmon", Kind.FLOAT), (f"{base}/imon", Kind.FLOAT),
                    (f"{base}/status", Kind.INT), (f"{base}/power", Kind.BOOL),
                    (f"{base}/v0set", Kind.FLOAT), (f"{base}/i0max", Kind.FLOAT),
                    (f"{base}/rup", Kind.FLOAT), (f"{base}/rdwn", Kind.FLOAT),
                    (f"{base}/trip", Kind.FLOAT)]
        return out

    def advance(self, t_ms, dt_ms):
        for channel in self.channels.values():
            channel.step(t_ms, dt_ms)

    def read(self, t_ms):
        out = []
        for ch, channel in self.channels.items():
            base = f"{self.service}/{ch}"
            s = channel.state
            out += [Update(f"{base}/vmon", Kind.FLOAT, round(s.vmon, 3), t_ms),
                    Update(f"{base}/imon", Kind.FLOAT, round(s.imon, 4), t_ms),
                    Update(f"{base}/status", Kind.INT, s.status, t_ms),
                    Update(f"{base}/power", Kind.BOOL, channel.power, t_ms),
                    Update(f"{base}/v0set", Kind.FLOAT, channel.settings.v0set, t_ms),
                    Update(f"{base}/i0max", Kind.FLOAT, channel.settings.i0max, t_ms),
                    Update(f"{base}/rup", Kind.FLOAT, channel.settings.ramp_up, t_ms),
                    Update(f"{base}/rdwn", Kind.FLOAT, channel.settings.ramp_down, t_ms),
                    Update(f"{base}/trip", Kind.FLOAT, channel.settings.trip_time, t_ms)]
        return out

    def command(self, path, value) -> str:
        rel = path.removeprefix(self.service + "/")
        ch, _, item = rel.partition("/")
        channel = self.channels.get(ch)
        if channel is None or not item:
            raise CommandRejected(f"unknown channel item {path}")
        if item == "power":
            channel.switch(bool(value))
        elif item == "clear":
            channel.clear()
        elif item in ("v0set", "i0max", "rup", "rdwn", "trip"):
            channel.apply_setting(item, float(value))
        else:
            raise CommandRejected(f"item {item!r} is not commandable")
        return "OK"

    def channel_by_path(self, path: str) -> HVChannel | None:
        rel = path.removeprefix(self.service + "/")
        return self.channels.get(rel.split("/")[0])


class LVSupplyDevice(HVCrateDevice):
    """Low-voltage supply: same machinery, low-voltage settings, and only the
    four monitoring leaves."""

    read_period_ms = 500

    def __init__(self, spec: DeviceSpec):
        SimDevice.__init__(self, spec.service)
        n = spec.get_int("channels", 8)
        settings = HVChannelSettings(v0set=6.0, i0max=50.0, ramp_up=12.0,
                                     ramp_down=12.0, trip_time=1.0)
        self.channels = {f"ch{i:02d}": HVChannel(f"{self.service}/ch{i:02d}", settings)
                         for i in range(n)}
        for channel in self.channels.values():
            channel.switch(True)  # LV is on by default: it powers front-end cards

    def items(self):
        out = []
        for ch in self.channels:
            base = f"{self.service}/{ch}"
            out += [(f"{base}/vmon", Kind.FLOAT), (f"{base}/imon", Kind.FLOAT),
                    (f"{base}/status", Kind.INT), (f"{base}/power", Kind.BOOL)]
        return out

    def read(self, t_ms):
        out = []
        for ch, channel in self.channels.items():
            base = f"{self.service}/{ch}"
            s = channel.state
            out += [Update(f"{base}/vmon", Kind.FLOAT, round(s.vmon, 3), t_ms),
                    Update(f"{base}/imon", Kind.FLOAT, round(s.imon, 4), t_ms),
                    Update(f"{base}/status", Kind.INT, s.status, t_ms),
                    Update(f"{base}/power", Kind.BOOL, channel.power, t_ms)]
        return out

    def command(self, path, value) -> str:
        rel = path.removeprefix(self.service + "/")
        ch, _, item = rel.partition("/")
        channel = self.channels.get(ch)
        if channel is None or item not in ("power", "clear"):
            raise CommandRejected(f"unknown LV command target {path}")
        if item == "power":
            channel.switch(bool(value))
        else:
            channel.clear()
        return "OK"


class VMECrateDevice(SimDevice):
    read_period_ms = 1_000

    def __init__(self, spec: DeviceSpec, index: int = 0):
        super().__init__(spec.service)
        self.index = index
        self.frozen = False

    def items(self):
        return [(f"{self.service}/v5", Kind.FLOAT), (f"{self.service}/v12", Kind.FLOAT),
                (f"{self.service}/temp", Kind.FLOAT), (f"{self.service}/fan", Kind.FLOAT),
                (f"{self.service}/status", Kind.INT)]

    def step(self, t_ms, dt_ms):
        if self.frozen:
            return []  # a dead crate republishes nothing: timestamps go stale
        return super().step(t_ms, dt_ms)

    def read(self, t_ms):
        phase = self.index * 0.7
        t = t_ms / 1000.0
        return [Update(f"{self.service}/v5", Kind.FLOAT, round(5.0 + 0.02 * math.sin(t / 60 + phase), 4), t_ms),
                Update(f"{self.service}/v12", Kind.FLOAT, round(12.0 + 0.05 * math.sin(t / 90 + phase), 4), t_ms),
                Update(f"{self.service}/temp", Kind.FLOAT, round(35.0 + 2.0 * math.sin(t / 600 + phase), 3), t_ms),
                Update(f"{self.service}/fan", Kind.FLOAT, round(4000 + 100 * math.sin(t / 300 + phase), 1), t_ms),
                Update(f"{self.service}/status", Kind.INT, states.ON, t_ms)]


class ELMBDevice(SimDevice):
    read_period_ms = 1_000

    def __init__(self, spec: DeviceSpec, index: int = 0):
        super().__init__(spec.service)
        self.n = spec.get_int("channels", 64)
        self.board = ELMBBoard(spec.service, gain=spec.get_float("gain", 30.0),
                               offset=spec.get_float("offset", -50.0))
        self.index = index

    def items(self):
        out = []
        for ch in range(self.n):
            base = f"{self.service}/ch{ch:02d}"
            out += [(f"{base}/code", Kind.INT), (f"{base}/value", Kind.FLOAT)]
        return out

    def advance(self, t_ms, dt_ms):
        # PT100-style card temperatures wander slowly around 22 degrees
        t = t_ms / 1000.0
        for ch in range(self.n):
            temp = 22.0 + 3.0 * math.sin(2 * math.pi * t / 3600.0 + ch * 0.4 + self.index)
            self.board.set_source(ch, self.board.volts_for(round(temp, 4)))

    def read(self, t_ms):
        out = []
        for ch in range(self.n):
            code, value = self.board.read(ch)
            base = f"{self.service}/ch{ch:02d}"
            out += [Update(f"{base}/code", Kind.INT, code, t_ms),
                    Update(f"{base}/value", Kind.FLOAT, round(value, 4), t_ms)]
        return out


class PLCDevice(SimDevice):
    read_period_ms = 1_000  # scan period

    def __init__(self, spec: DeviceSpec):
        super().__init__(spec.service)
        self.unit = PLCUnit(spec.service)
        loops = spec.get("loops", "flow:10:0.2,mix:70:1.0") or ""
        for part in loops.split(","):
            name, setpoint, tolerance = part.split(":")
            self.unit.add_loop(name, float(setpoint), float(tolerance))

    def items(self):
        out = [(f"{self.service}/watchdog", Kind.INT)]
        for loop in self.unit.loops:
            out += [(f"{self.service}/{loop}/actual", Kind.FLOAT),
                    (f"{self.service}/{loop}/setpoint", Kind.FLOAT)]
        return out

    def read(self, t_ms):
        self.unit.scan()
        out = [Update(f"{self.service}/watchdog", Kind.INT, self.unit.watchdog, t_ms)]
        for name, loop in self.unit.loops.items():
            out += [Update(f"{self.service}/{name}/actual", Kind.FLOAT, round(loop.actual, 4), t_ms),
                    Update(f"{self.service}/{name}/setpoint", Kind.FLOAT, loop.setpoint, t_ms)]
        return out

    def command(self, path, value) -> str:
        rel = path.removeprefix(self.service + "/")
        loop, _, item = rel.partition("/")
        if item != "setpoint" or loop not in self.unit.loops:
            raise CommandRejected(f"only loop setpoints are commandable, not {path}")
        self.unit.set_setpoint(loop, float(value))
        return "OK"


class MagnetDevice(SimDevice):
    read_only = True  # beamline infrastructure: monitoring only
    read_period_ms = SIM_DT_MS

    def __init__(self, spec: DeviceSpec):
        super().__init__(spec.service)
        self.magnet = MagnetUnit(spec.get("name", spec.service.rsplit("/", 1)[-1]))

    def items(self):
        return [(f"{self.service}/current", Kind.FLOAT), (f"{self.service}/field", Kind.FLOAT),
                (f"{self.service}/state", Kind.INT)]

    def advance(self, t_ms, dt_ms):
        self.magnet.step(dt_ms)

    def read(self, t_ms):
        return [Update(f"{self.service}/current", Kind.FLOAT, round(self.magnet.current, 2), t_ms),
                Update(f"{self.service}/field", Kind.FLOAT, round(self.magnet.field, 5), t_ms),
                Update(f"{self.service}/state", Kind.INT, self.magnet.state, t_ms)]


class CedarDevice(SimDevice):
    read_only = True
    read_period_ms = 1_000

    def __init__(self, spec: DeviceSpec):
        super().__init__(spec.service)
        self.gas = CedarGas(spec.service)

    def items(self):
        return [(f"{self.service}/gas_density", Kind.FLOAT), (f"{self.service}/hv", Kind.FLOAT),
                (f"{self.service}/motor_pos", Kind.FLOAT)]

    def advance(self, t_ms, dt_ms):
        self.gas.step(dt_ms)

    def read(self, t_ms):
        return [Update(f"{self.service}/gas_density", Kind.FLOAT, round(self.gas.density, 5), t_ms),
                Update(f"{self.service}/hv", Kind.FLOAT, self.gas.hv, t_ms),
                Update(f"{self.service}/motor_pos", Kind.FLOAT, self.gas.motor_pos, t_ms)]


class PositionDevice(SimDevice):
    """CAMAC-read detector position encoders: near-constant counts with a
    slow deterministic drift."""

    read_period_ms = 10_000

    def __init__(self, spec: DeviceSpec, index: int = 0):
        super().__init__(spec.service)
        self.index = index

    def items(self):
        return [(f"{self.service}/x_counts", Kind.INT),
                (f"{self.service}/y_counts", Kind.INT)]

    def read(self, t_ms):
        base = 120_000 + self.index * 1000
        drift = int(t_ms / 3_600_000)  # one count per hour
        return [Update(f"{self.service}/x_counts", Kind.INT, base + drift, t_ms),
                Update(f"{self.service}/y_counts", Kind.INT, base // 2 + drift, t_ms)]


class BeamDevice(SimDevice):
    read_only = True

    def __init__(self, spec: DeviceSpec, seed: int):
        super().__init__(spec.service)
        calos = {}
        for part in (spec.get("calos", "") or "").split(","):
            if part:
                name, n = part.split(":")
                calos[name] = int(n)
        self.source = SpillSource(spec.service, seed=seed,
                                  supercycle_ms=round(spec.get_float("supercycle", 40.0) * 1000),
                                  triggers=tuple(f"t{i}" for i in range(spec.get_int("triggers", 8))),
                                  calo_channels=calos)
        self.last_record = None

    def items(self):
        out = [(f"{self.service}/spill", Kind.INT), (f"{self.service}/flux", Kind.FLOAT)]
        out += [(f"{self.service}/trigger/{t}/count", Kind.INT) for t in self.source.triggers]
        out += [(f"{self.service}/calo/{c}/amplitudes", Kind.FLOAT_ARRAY)
                for c in self.source.calo_channels]
        return out

    def step(self, t_ms, dt_ms):
        record = self.source.step(t_ms)
        if record is None:
            return []
        self.last_record = record
        # spill number goes last: downstream treats it as the epoch-complete marker
        out = [Update(f"{self.service}/flux", Kind.FLOAT, record.flux, t_ms)]
        for trig, count in record.trigger_counts.items():
            out.append(Update(f"{self.service}/trigger/{trig}/count", Kind.INT, count, t_ms))
        for calo, amps in record.amplitudes.items():
            out.append(Update(f"{self.service}/calo/{calo}/amplitudes", Kind.FLOAT_ARRAY, amps, t_ms))
        out.append(Update(f"{self.service}/spill", Kind.INT, record.spill, t_ms))
        return out


_BUILDERS: dict[str, Callable] = {}


def _build_device(spec: DeviceSpec, index: int, seed: int) -> SimDevice:
    if spec.type == "hv":
        return HVCrateDevice(spec)
    if spec.type == "lv":
        return LVSupplyDevice(spec)
    if spec.type == "vme":
        return VMECrateDevice(spec, index)
    if spec.type == "elmb":
        return ELMBDevice(spec, index)
    if spec.type == "plc":
        return PLCDevice(spec)
    if spec.type == "magnet":
        return MagnetDevice(spec)
    if spec.type == "cedar":
        return CedarDevice(spec)
    if spec.type == "position":
        return PositionDevice(spec, index)
    if spec.type == "beam":
        return BeamDevice(spec, seed)
    raise SlowControlError(f"unknown device type {spec.type!r}")


class DeviceFleet:
    """All simulated devices of a manifest, steppable as one unit."""

    def __init__(self, manifest: Manifest, seed: int = 0):
        self.manifest = manifest
        self.seed = seed
        self.devices: list[SimDevice] = []
        self._alias_map = dict(manifest.aliases)
        for i, spec in enumerate(manifest.devices):
            self.devices.append(_build_device(spec, i, _device_seed(seed, spec.service)))
        self._by_service = {d.service: d for d in self.devices}

    def device(self, service: str) -> SimDevice:
        return self._by_service[service]

    def step(self, t_ms: int, dt_ms: int = SIM_DT_MS) -> list[Update]:
        out: list[Update] = []
        for device in self.devices:
            out.extend(device.step(t_ms, dt_ms))
        return out

    def route_command(self, path: str, value) -> str:
        device = self._owner_of(path)
        if device is None:
            raise CommandRejected(f"no device serves {path}")
        return device.command(path, value)

    def _owner_of(self, path: str) -> SimDevice | None:
        segments = path.split("/")
        for cut in range(len(segments), 0, -1):
            device = self._by_service.get("/".join(segments[:cut]))
            if device is not None:
                return device
        return None

    def resolve(self, name: str) -> str:
        """Alias-or-path to hardware path, using the manifest alias table."""
        if name in self._alias_map:
            return self._alias_map[name]
        segments = name.split("/")
        for cut in range(len(segments) - 1, 0, -1):
            head = "/".join(segments[:cut])
            if head in self._alias_map:
                return self._alias_map[head] + "/" + "/".join(segments[cut:])
        return name

    # -- fault injection -----------------------------------------------------

    def apply_fault(self, fault: FaultEvent) -> None:
        args = fault.args
        if fault.action == "trip" and args[:1] == ("magnet",):
            service = args[1] if args[1] in self._by_service else f"magnets/{args[1]}"
            self.device(service).magnet.trip()
        elif fault.action == "overcurrent":
            path = self.resolve(args[0])
            device = self._owner_of(path)
            channel = device.channel_by_path(path)
            channel.imon_fault_ua = float(args[1]) if len(args) > 1 else channel.settings.i0max * 1.2
        elif fault.action == "overtemp":
            path = self.resolve(args[0])
            device = self._owner_of(path)
            ch = int(path.removeprefix(device.service + "/").split("/")[0].removeprefix("ch"))
            degc = float(args[1]) if len(args) > 1 else 80.0
            device.board.override(ch, device.board.volts_for(degc))
        elif fault.action == "freeze" and args[0] == "plc":
            self.device(args[1]).unit.frozen = True
        elif fault.action == "freeze" and args[0] == "vme":
            self.device(args[1]).frozen = True
        elif fault.action == "refill" and args[0] == "cedar":
            self.device(args[1]).gas.refill()
        elif fault.action == "leak" and args[0] == "cedar":
            self.device(args[1]).gas.leak(float(args[2]) if len(args) > 2 else 50.0)
        elif fault.action == "drift" and args[0] == "calo":
            beam = next(d for d in self.devices if isinstance(d, BeamDevice))
            beam.source.inject_drift(args[1], int(args[2]), float(args[3]))
        elif fault.action == "zeroflux":
            beam = next(d for d in self.devices if isinstance(d, BeamDevice))
            count = int(args[1]) if len(args) > 1 else 1
            nxt = beam.source.spill + 1
            beam.source.zero_flux_spills.update(range(nxt, nxt + count))
        elif fault.action == "setpoint":
            self.device(args[0]).unit.set_setpoint(args[1], float(args[2]))
        else:
            raise SlowControlError(f"cannot apply fault {fault}")


@dataclass
class FleetRunner:
    """Drives a fleet on a clock, applying scripted faults at their times."""

    fleet: DeviceFleet
    clock: object
    publish: Callable[[list[Update]], None]
    faults: list[FaultEvent] = field(default_factory=list)
    dt_ms: int = SIM_DT_MS
    duration_ms: int | None = None
    anchor_ms: int | None = None  # scripted fault times count from here

    def __post_init__(self):
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.started_at: int | None = None

    def run(self) -> None:
        t0 = self.anchor_ms if self.anchor_ms is not None else self.clock.now_ms()
        self.started_at = t0
        pending = sorted(self.faults, key=lambda f: f.t_ms)
        t = max(t0, self.clock.now_ms())  # late start never back-steps
        t -= t % self.dt_ms
        while not self._stop.is_set():
            t += self.dt_ms
            self.clock.sleep_until(t, self._stop)
            if self._stop.is_set():
                return
            while pending and t - t0 >= pending[0].t_ms:
                self.fleet.apply_fault(pending.pop(0))
            updates = self.fleet.step(t, self.dt_ms)
            if updates:
                self.publish(updates)
            if self.duration_ms is not None and t - t0 >= self.duration_ms:
                return

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run, name="fleet-runner", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
