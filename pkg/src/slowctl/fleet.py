"""Fleet manifest: the one configuration file describing the experiment.

Line-oriented text, `#` comments and blank lines ignored. Record types:

    DP <path> <kind>
    ALIAS <alias> <path>
    GROUP <name> <interval_s> <path>...
    DEVICE <type> <service> [key=value ...]
    ARCHIVE <max_interval_s> <dead_band|-> <path-or-prefix>...
    DETECTOR <name> <path-prefix>...

DP/ALIAS/GROUP carry the datapoint tree; DEVICE tells the simulator what to
run; ARCHIVE declares archiving policies by longest-prefix match; DETECTOR
overrides the detector attribution used for authorization (default: first
segment of the item's alias, else of its path). Exact grammar in
docs/formats.md. Multiple GROUP lines with one name accumulate paths.

This module also builds the shipped fleet profiles (`mini` for process-level
demos, `demo` at the full experiment scale) deterministically.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

from .alarms import AlertConfig, bands_from_limits
from .configstore import HVRefLine, serialize_hvref
from .tree import DatapointTree
from .values import Kind, SlowControlError

HV_DEFAULTS = {"v0set": 1500.0, "i0max": 10.0, "rup": 100.0, "rdwn": 150.0, "trip": 2.0}
# Synthetic defaults: no published per-channel settings exist for the modeled setup.

HV_CHANNEL_LEAVES = (
    ("vmon", Kind.FLOAT), ("imon", Kind.FLOAT), ("status", Kind.INT), ("power", Kind.BOOL),
    ("v0set", Kind.FLOAT), ("i0max", Kind.FLOAT), ("rup", Kind.FLOAT),
    ("rdwn", Kind.FLOAT), ("trip", Kind.FLOAT),
)
LV_CHANNEL_LEAVES = (
    ("vmon", Kind.FLOAT), ("imon", Kind.FLOAT), ("status", Kind.INT), ("power", Kind.BOOL),
)
VME_LEAVES = (
    ("v5", Kind.FLOAT), ("v12", Kind.FLOAT), ("temp", Kind.FLOAT),
    ("fan", Kind.FLOAT), ("status", Kind.INT),
)
MAGNET_LEAVES = (("current", Kind.FLOAT), ("field", Kind.FLOAT), ("state", Kind.INT))
CEDAR_LEAVES = (("gas_density", Kind.FLOAT), ("hv", Kind.FLOAT), ("motor_pos", Kind.FLOAT))


class ManifestError(SlowControlError):
    pass


@dataclass(slots=True)
class DeviceSpec:
    type: str
    service: str
    params: dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.params.get(key, default)

    def get_int(self, key: str, default: int) -> int:
        return int(self.params.get(key, default))

    def get_float(self, key: str, default: float) -> float:
        return float(self.params.get(key, default))


@dataclass(slots=True)
class ArchiveRule:
    max_interval_ms: int
    dead_band: float | None  # None = change-only
    prefixes: list[str]


@dataclass
class Manifest:
    datapoints: list[tuple[str, Kind]] = field(default_factory=list)
    aliases: list[tuple[str, str]] = field(default_factory=list)
    groups: dict[str, tuple[int, list[str]]] = field(default_factory=dict)  # name -> (ms, paths)
    devices: list[DeviceSpec] = field(default_factory=list)
    archive_rules: list[ArchiveRule] = field(default_factory=list)
    detectors: dict[str, str] = field(default_factory=dict)  # path prefix -> detector

    @classmethod
    def parse(cls, text: str) -> "Manifest":
        m = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            tag, args = fields[0], fields[1:]
            try:
                if tag == "DP":
                    path, kind = args
                    m.datapoints.append((path, Kind(kind)))
                elif tag == "ALIAS":
                    alias, path = args
                    m.aliases.append((alias, path))
                elif tag == "GROUP":
                    name, interval_s = args[0], float(args[1])
                    interval_ms = round(interval_s * 1000)
                    prev = m.groups.get(name)
                    if prev is not None and prev[0] != interval_ms:
                        raise ManifestError(f"group {name} interval redefined")
                    paths = prev[1] if prev else []
                    paths.extend(args[2:])
                    m.groups[name] = (interval_ms, paths)
                elif tag == "DEVICE":
                    dtype, service = args[0], args[1]
                    params = {}
                    for kv in args[2:]:
                        k, _, v = kv.partition("=")
                        params[k] = v
                    m.devices.append(DeviceSpec(dtype, service, params))
                elif tag == "ARCHIVE":
                    max_interval_ms = round(float(args[0]) * 1000)
                    dead_band = None if args[1] == "-" else float(args[1])
                    m.archive_rules.append(ArchiveRule(max_interval_ms, dead_band, list(args[2:])))
                elif tag == "DETECTOR":
                    name = args[0]
                    for prefix in args[1:]:
                        m.detectors[prefix] = name
                else:
                    raise ManifestError(f"unknown record type {tag!r}")
            except ManifestError:
                raise
            except Exception as exc:
                raise ManifestError(f"line {lineno}: cannot parse {raw!r}: {exc}") from exc
        return m

    @classmethod
    def parse_file(cls, path) -> "Manifest":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def serialize(self) -> str:
        out = io.StringIO()
        for path, kind in self.datapoints:
            out.write(f"DP {path} {kind.value}\n")
        for alias, path in self.aliases:
            out.write(f"ALIAS {alias} {path}\n")
        for name, (interval_ms, paths) in self.groups.items():
            for i in range(0, len(paths), 16):
                chunk = " ".join(paths[i:i + 16])
                out.write(f"GROUP {name} {interval_ms / 1000:g} {chunk}\n")
        for dev in self.devices:
            params = " ".join(f"{k}={v}" for k, v in dev.params.items())
            out.write(f"DEVICE {dev.type} {dev.service}{' ' + params if params else ''}\n")
        for rule in self.archive_rules:
            band = "-" if rule.dead_band is None else f"{rule.dead_band:g}"
            out.write(f"ARCHIVE {rule.max_interval_ms / 1000:g} {band} {' '.join(rule.prefixes)}\n")
        by_detector: dict[str, list[str]] = {}
        for prefix, name in self.detectors.items():
            by_detector.setdefault(name, []).append(prefix)
        for name, prefixes in by_detector.items():
            out.write(f"DETECTOR {name} {' '.join(prefixes)}\n")
        return out.getvalue()

    def build_tree(self) -> DatapointTree:
        tree = DatapointTree()
        for path, kind in self.datapoints:
            tree.add_leaf(path, kind)
        for alias, path in self.aliases:
            tree.add_alias(alias, path)
        for name, (interval_ms, paths) in self.groups.items():
            tree.define_group(name, interval_ms, paths)
        return tree

    def archive_policy_for(self, path: str) -> ArchiveRule | None:
        """Longest matching prefix wins; exact path beats any prefix."""
        best: tuple[int, ArchiveRule] | None = None
        for rule in self.archive_rules:
            for prefix in rule.prefixes:
                if path == prefix or path.startswith(prefix + "/") or prefix == "*":
                    score = len(prefix) if prefix != "*" else 0
                    if best is None or score > best[0]:
                        best = (score, rule)
        return best[1] if best else None

    def detector_of(self, path: str, alias: str | None = None) -> str:
        name = alias if alias is not None else path
        for prefix in sorted(self.detectors, key=len, reverse=True):
            if name == prefix or name.startswith(prefix + "/"):
                return self.detectors[prefix]
        return name.split("/", 1)[0]


# ---------------------------------------------------------------------------
# Shipped fleet profiles
# ---------------------------------------------------------------------------

#: detectors given HV channels, round-robin over crates
_DETECTORS = ("ecal1", "ecal2", "hcal1", "hcal2", "dc00", "mm03", "rich", "straw")
_SM2_PROTECTED = ("ecal2", "dc00", "mm03")  # magnetic-gradient-sensitive detectors
_PAIRED = ("straw", "hcal2")  # detectors whose HV channels switch in pairs


@dataclass
class FleetBundle:
    """Everything a profile generates: manifest plus companion config texts."""

    manifest: Manifest
    rules_text: str
    recipe_items: dict[str, dict]  # alias path -> alarm band description
    hvref_text: str
    users_text: str

    @property
    def manifest_text(self) -> str:
        return self.manifest.serialize()


def _hv_crate(m: Manifest, crate: str, alias_prefix: str, channels: int,
              fast: list[str], slow: list[str], recipe: dict[str, dict],
              settings=HV_DEFAULTS) -> list[str]:
    aliases = []
    for ch in range(channels):
        base = f"{crate}/ch{ch:03d}"
        alias = f"{alias_prefix}/ch{ch:03d}"
        for leaf, kind in HV_CHANNEL_LEAVES:
            m.datapoints.append((f"{base}/{leaf}", kind))
        m.aliases.append((alias, base))
        aliases.append(alias)
        fast += [f"{base}/vmon", f"{base}/imon", f"{base}/status"]
        slow += [f"{base}/power", f"{base}/v0set", f"{base}/i0max",
                 f"{base}/rup", f"{base}/rdwn", f"{base}/trip"]
        v0 = settings["v0set"]
        recipe[f"{alias}/vmon"] = {"ok": (-50.0, v0 + 50.0), "warn": (-100.0, v0 + 100.0)}
        recipe[f"{alias}/imon"] = {"ok": (-1.0, settings["i0max"]), "warn": (-2.0, settings["i0max"] * 1.5)}
        recipe[f"{alias}/status"] = {"ok": (-0.5, 3.5), "warn": (-1.0, 3.5), "ack": True}
        for leaf in ("v0set", "i0max", "rup", "rdwn", "trip"):
            nominal = settings[leaf]
            span = max(abs(nominal) * 0.2, 1.0)
            recipe[f"{alias}/{leaf}"] = {"ok": (nominal - span, nominal + span),
                                         "warn": (nominal - 2 * span, nominal + 2 * span)}
    return aliases


def _build_fleet(n_crates: int, hv_channels: int, n_lv: int, lv_channels: int,
                 n_vme: int, n_elmb: int, elmb_channels: int, n_plc: int,
                 calo_channels: dict[str, int], n_positions: int) -> FleetBundle:
    m = Manifest()
    fast: list[str] = []
    slow: list[str] = []
    beam_grp: list[str] = []
    pos_grp: list[str] = []
    recipe: dict[str, dict] = {}
    hvref_lines: list[str] = []
    rules: list[str] = ["# software interlock rules for the shipped fleet"]

    for i in range(n_crates):
        crate = f"caen/crate{i:02d}"
        detector = _DETECTORS[i % len(_DETECTORS)]
        # Several crates can serve one detector; later ones get a numbered
        # section in the logical name so the alias table stays a bijection.
        section = i // len(_DETECTORS)
        alias_prefix = f"{detector}/hv" if section == 0 else f"{detector}/hv{section}"
        m.devices.append(DeviceSpec("hv", crate, {"channels": str(hv_channels),
                                                  "detector": detector, "power": "on"}))
        _hv_crate(m, crate, alias_prefix, hv_channels, fast, slow, recipe)

    for i in range(n_lv):
        service = f"wiener/ps{i:02d}"
        detector = _DETECTORS[i % len(_DETECTORS)]
        m.devices.append(DeviceSpec("lv", service, {"channels": str(lv_channels),
                                                    "detector": detector}))
        for ch in range(lv_channels):
            base = f"{service}/ch{ch:02d}"
            for leaf, kind in LV_CHANNEL_LEAVES:
                m.datapoints.append((f"{base}/{leaf}", kind))
            alias = f"{detector}/lv/s{i:02d}/ch{ch:02d}"
            m.aliases.append((alias, base))
            fast += [f"{base}/vmon", f"{base}/imon", f"{base}/status"]
            slow += [f"{base}/power"]
            recipe[f"{alias}/vmon"] = {"ok": (5.5, 6.5), "warn": (5.0, 7.0)}
            recipe[f"{alias}/imon"] = {"ok": (-0.5, 40.0), "warn": (-1.0, 60.0)}
            recipe[f"{alias}/status"] = {"ok": (-0.5, 3.5), "warn": (-1.0, 3.5), "ack": True}

    for i in range(n_vme):
        service = f"vme/crate{i:02d}"
        m.devices.append(DeviceSpec("vme", service, {}))
        for leaf, kind in VME_LEAVES:
            m.datapoints.append((f"{service}/{leaf}", kind))
        slow += [f"{service}/{leaf}" for leaf, _ in VME_LEAVES]
        recipe[f"{service}/v5"] = {"ok": (4.75, 5.25), "warn": (4.5, 5.5)}
        recipe[f"{service}/v12"] = {"ok": (11.4, 12.6), "warn": (10.8, 13.2)}
        recipe[f"{service}/temp"] = {"ok": (0.0, 45.0), "warn": (-5.0, 55.0)}

    lv_targets = [a for a, p in m.aliases if "/lv/" in a and a.endswith("/ch00")]
    for i in range(n_elmb):
        service = f"elmb/tb{i:02d}"
        m.devices.append(DeviceSpec("elmb", service,
                                    {"channels": str(elmb_channels), "gain": "30", "offset": "-50"}))
        for ch in range(elmb_channels):
            base = f"{service}/ch{ch:02d}"
            m.datapoints.append((f"{base}/code", Kind.INT))
            m.datapoints.append((f"{base}/value", Kind.FLOAT))
            slow.append(f"{base}/code")
            fast.append(f"{base}/value")
            recipe[f"{base}/value"] = {"ok": (5.0, 50.0), "warn": (0.0, 55.0)}
        if lv_targets:
            lv = lv_targets[i % len(lv_targets)].rsplit("/ch", 1)[0] + "/ch00"
            rules.append(f"LVMAP {service}/* {lv}")

    for i in range(n_plc):
        service = f"gas/plc{i:02d}"
        m.devices.append(DeviceSpec("plc", service, {"loops": "flow:10:0.2,mix:70:1.0"}))
        for loop in ("flow", "mix"):
            m.datapoints.append((f"{service}/{loop}/actual", Kind.FLOAT))
            m.datapoints.append((f"{service}/{loop}/setpoint", Kind.FLOAT))
            fast.append(f"{service}/{loop}/actual")
            slow.append(f"{service}/{loop}/setpoint")
        m.datapoints.append((f"{service}/watchdog", Kind.INT))
        fast.append(f"{service}/watchdog")
        recipe[f"{service}/flow/actual"] = {"ok": (8.0, 12.0), "warn": (5.0, 15.0)}
        recipe[f"{service}/mix/actual"] = {"ok": (65.0, 75.0), "warn": (60.0, 80.0)}

    for name in ("SM1", "SM2", "Bend6"):
        service = f"magnets/{name}"
        m.devices.append(DeviceSpec("magnet", service, {"name": name}))
        for leaf, kind in MAGNET_LEAVES:
            m.datapoints.append((f"{service}/{leaf}", kind))
        fast += [f"{service}/current", f"{service}/field", f"{service}/state"]

    for i in (1, 2):
        service = f"cedar/cedar{i}"
        m.devices.append(DeviceSpec("cedar", service, {}))
        for leaf, kind in CEDAR_LEAVES:
            m.datapoints.append((f"{service}/{leaf}", kind))
        slow += [f"{service}/{leaf}" for leaf, _ in CEDAR_LEAVES]
        recipe[f"{service}/gas_density"] = {"ok": (0.9, 1.2), "warn": (0.85, 1.3)}

    calo_spec = ",".join(f"{name}:{n}" for name, n in calo_channels.items())
    m.devices.append(DeviceSpec("beam", "beam",
                                {"triggers": "8", "calos": calo_spec, "supercycle": "40"}))
    m.datapoints.append(("beam/spill", Kind.INT))
    m.datapoints.append(("beam/flux", Kind.FLOAT))
    beam_grp += ["beam/spill", "beam/flux"]
    for t in range(8):
        m.datapoints.append((f"beam/trigger/t{t}/count", Kind.INT))
        beam_grp.append(f"beam/trigger/t{t}/count")
    for name in calo_channels:
        m.datapoints.append((f"beam/calo/{name}/amplitudes", Kind.FLOAT_ARRAY))
        beam_grp.append(f"beam/calo/{name}/amplitudes")

    for i in range(n_positions):
        det = _DETECTORS[i % len(_DETECTORS)]
        base = f"positions/{det}{i:02d}"
        m.devices.append(DeviceSpec("position", base, {}))
        for axis in ("x", "y"):
            m.datapoints.append((f"{base}/{axis}_counts", Kind.INT))
            slow.append(f"{base}/{axis}_counts")
            # the mm-calibrated coordinate is a supervisor-derived leaf
            m.datapoints.append((f"{base}/{axis}", Kind.FLOAT))
            pos_grp.append(f"{base}/{axis}")

    m.groups["fast"] = (1_500, fast)
    m.groups["slow"] = (120_000, slow)
    m.groups["beam"] = (40_000, beam_grp)
    if pos_grp:
        m.groups["positions"] = (1_800_000, pos_grp)

    m.archive_rules = [
        ArchiveRule(600_000, 1.0, ["elmb", "vme"]),          # temperature-style: 10 min / 1 degree
        ArchiveRule(120_000, 0.5, ["caen", "wiener"]),
        ArchiveRule(120_000, None, ["gas", "magnets", "cedar"]),
        ArchiveRule(40_000, None, ["beam", "derived"]),       # beam supercycle cadence
        ArchiveRule(1_800_000, 5.0, ["positions"]),           # half-hour backstop
    ]

    for det in _DETECTORS:
        m.detectors[det] = det
    m.detectors["beam"] = "beam"
    m.detectors["magnets"] = "magnets"
    m.detectors["cedar"] = "cedar"
    m.detectors["gas"] = "gas"
    m.detectors["vme"] = "vme"
    m.detectors["elmb"] = "elmb"
    m.detectors["positions"] = "positions"
    m.detectors["derived"] = "derived"
    m.detectors["sys"] = "sys"

    # Interlock declarations: magnet protections, HV pairs, overtemperature.
    for det in _SM2_PROTECTED:
        rules.append(f"PROTECT SM2 {det}/hv/*")
    rules.append("PROTECT SM1 ecal1/hv/*")
    for det in _PAIRED:
        chans = sorted(a for a, _ in m.aliases if a.startswith(f"{det}/hv/"))
        for a, b in zip(chans[::2], chans[1::2]):
            rules.append(f"PAIR {a} {b}")
    rules.append("")
    rules.append("RULE magnet_sm2 ON state(magnets/SM2/state, TRIPPED|OFF) DO off(protected(SM2)) COOLDOWN 10")
    rules.append("RULE magnet_sm1 ON state(magnets/SM1/state, TRIPPED|OFF) DO off(protected(SM1)) COOLDOWN 10")
    rules.append("RULE pair_trip ON trip(*/hv/*) WHERE pair(declared) DO off(partner) COOLDOWN 5")
    rules.append("RULE overtemp ON above(elmb/*/value, 55.0) DO off(lv_of(target)) COOLDOWN 30")

    for alias, path in m.aliases:
        if path.startswith("caen/"):
            hvref_lines.append(HVRefLine(alias, HV_DEFAULTS["v0set"], HV_DEFAULTS["i0max"],
                                         HV_DEFAULTS["rup"], HV_DEFAULTS["rdwn"],
                                         HV_DEFAULTS["trip"]))

    users = [
        "# USER <name> <password> <role> [detector ...]; role: guest|shift|expert",
        "USER guest guest guest",
        "USER shift shift shift",
        "USER control_room shift shift CONTROL_ROOM",
    ]
    for det in _DETECTORS:
        users.append(f"USER {det}_expert expert expert {det}")
    users.append("USER dcs dcs expert " + " ".join(sorted(set(m.detectors.values()))))

    return FleetBundle(
        manifest=m,
        rules_text="\n".join(rules) + "\n",
        recipe_items=recipe,
        hvref_text=serialize_hvref(hvref_lines),
        users_text="\n".join(users) + "\n",
    )


def profile_mini() -> FleetBundle:
    """Small fleet for multi-process scenario runs: ~600 leaves."""
    return _build_fleet(n_crates=4, hv_channels=12, n_lv=2, lv_channels=4,
                        n_vme=2, n_elmb=2, elmb_channels=8, n_plc=2,
                        calo_channels={"ecal1": 16, "ecal2": 32}, n_positions=2)


def profile_demo() -> FleetBundle:
    """Experiment-scale fleet: >=20000 leaves, >=17000 alarm-configured,
    >=19000 archived."""
    return _build_fleet(n_crates=24, hv_channels=96, n_lv=14, lv_channels=12,
                        n_vme=19, n_elmb=16, elmb_channels=64, n_plc=8,
                        calo_channels={"ecal1": 1500, "ecal2": 3000}, n_positions=6)


PROFILES = {"mini": profile_mini, "demo": profile_demo}


def build_recipe_configs(recipe_items: dict[str, dict]) -> dict[str, AlertConfig]:
    """Fleet recipe descriptions ({alias: {ok, warn, ack}}) to alert configs:
    OK inside `ok`, WARNING inside `warn`, ERROR outside."""
    out = {}
    for alias, spec in recipe_items.items():
        out[alias] = AlertConfig(alias, bands_from_limits(tuple(spec["ok"]), tuple(spec["warn"])),
                                 ack_required=bool(spec.get("ack", False)))
    return out
