"""Persistence of recipes (alarm-threshold sets), configuration snapshots
(hardware/logical mapping) and HV reference setting files.

Directory layout under the config root:

    recipes/<name>/<version>.recipe
    snapshots/<name>.snap
    hvref/<name>.ref

All three forms are line-oriented text that round-trips bit-exactly through
parse/serialize. Recipes are immutable: every save allocates a new version.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .alarms import AlertConfig, Band, Severity
from .values import SlowControlError


class ConfigStoreError(SlowControlError):
    pass


class RecipeNotFound(ConfigStoreError):
    pass


class SnapshotNotFound(ConfigStoreError):
    pass


class HVRefError(ConfigStoreError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# -- recipes --------------------------------------------------------------


@dataclass(frozen=True)
class Recipe:
    name: str
    version: int
    author: str
    created: str  # ISO-8601
    items: dict[str, AlertConfig] = field(default_factory=dict)


def serialize_recipe(recipe: Recipe) -> str:
    lines = [f"RECIPE {recipe.name} VERSION {recipe.version} "
             f"AUTHOR {recipe.author} CREATED {recipe.created}"]
    for alias in sorted(recipe.items):
        cfg = recipe.items[alias]
        bands = " ".join(f"{b.severity.name}:{_fmt(b.lo)}:{_fmt(b.hi)}"
                         for b in sorted(cfg.bands, key=lambda b: b.lo))
        lines.append(f"ITEM {alias} ACK {1 if cfg.ack_required else 0} {bands}")
    return "\n".join(lines) + "\n"


def parse_recipe(text: str) -> Recipe:
    header = None
    items: dict[str, AlertConfig] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] == "RECIPE":
            header = (fields[1], int(fields[3]), fields[5], fields[7])
        elif fields[0] == "ITEM":
            alias = fields[1]
            if fields[2] != "ACK":
                raise ConfigStoreError(f"line {lineno}: expected ACK")
            ack = fields[3] == "1"
            bands = []
            for token in fields[4:]:
                sev, lo, hi = token.split(":")
                bands.append(Band(float(lo), float(hi), Severity[sev]))
            items[alias] = AlertConfig(alias, tuple(bands), ack_required=ack)
        else:
            raise ConfigStoreError(f"line {lineno}: unknown record {fields[0]!r}")
    if header is None:
        raise ConfigStoreError("missing RECIPE header")
    return Recipe(header[0], header[1], header[2], header[3], items)


# -- snapshots ----------------------------------------------------------------


@dataclass(frozen=True)
class ConfigurationSnapshot:
    name: str
    created: str
    pairs: tuple[tuple[str, str], ...]  # (hardware path, alias)

    def __post_init__(self):
        hw = [p for p, _ in self.pairs]
        al = [a for _, a in self.pairs]
        if len(set(hw)) != len(hw) or len(set(al)) != len(al):
            raise ConfigStoreError(f"snapshot {self.name}: mapping is not a bijection")


@dataclass(frozen=True)
class SnapshotDiff:
    moved: tuple[tuple[str, str, str], ...]    # alias, old path, new path
    added: tuple[tuple[str, str], ...]         # alias, path
    removed: tuple[tuple[str, str], ...]

    @property
    def empty(self) -> bool:
        return not (self.moved or self.added or self.removed)


def serialize_snapshot(snap: ConfigurationSnapshot) -> str:
    lines = [f"SNAPSHOT {snap.name} CREATED {snap.created}"]
    for hw, alias in sorted(snap.pairs, key=lambda p: p[1]):
        lines.append(f"MAP {hw} {alias}")
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str) -> ConfigurationSnapshot:
    name = created = None
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] == "SNAPSHOT":
            name, created = fields[1], fields[3]
        elif fields[0] == "MAP":
            pairs.append((fields[1], fields[2]))
        else:
            raise ConfigStoreError(f"line {lineno}: unknown record {fields[0]!r}")
    if name is None:
        raise ConfigStoreError("missing SNAPSHOT header")
    return ConfigurationSnapshot(name, created, tuple(pairs))


def diff_snapshots(a: ConfigurationSnapshot, b: ConfigurationSnapshot) -> SnapshotDiff:
    """What changed between two stable states, keyed by logical alias: an
    alias now powered by a different channel is MOVED."""
    map_a = {alias: hw for hw, alias in a.pairs}
    map_b = {alias: hw for hw, alias in b.pairs}
    moved = tuple((alias, map_a[alias], map_b[alias])
                  for alias in sorted(map_a.keys() & map_b.keys())
                  if map_a[alias] != map_b[alias])
    added = tuple((alias, map_b[alias]) for alias in sorted(map_b.keys() - map_a.keys()))
    removed = tuple((alias, map_a[alias]) for alias in sorted(map_a.keys() - map_b.keys()))
    return SnapshotDiff(moved, added, removed)


# -- HV reference files -----------------------------------------------------------


@dataclass(frozen=True)
class HVRefLine:
    alias: str
    v0set: float
    i0max: float
    ramp_up: float
    ramp_down: float
    trip_time: float

    def __post_init__(self):
        for name in ("v0set", "i0max", "ramp_up", "ramp_down", "trip_time"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise HVRefError(f"{self.alias}: {name} must be finite and >= 0, got {v}")


def serialize_hvref(lines: list[HVRefLine]) -> str:
    out = ["# alias v0set i0max ramp_up ramp_down trip_time"]
    for ln in lines:
        out.append(f"{ln.alias} {_fmt(ln.v0set)} {_fmt(ln.i0max)} {_fmt(ln.ramp_up)} "
                   f"{_fmt(ln.ramp_down)} {_fmt(ln.trip_time)}")
    return "\n".join(out) + "\n"


def parse_hvref(text: str, strict: bool = True) -> tuple[list[HVRefLine], list[tuple[int, str]]]:
    """Returns (parsed lines, per-line errors). strict=True aborts on the
    first malformed line, naming it."""
    out: list[HVRefLine] = []
    errors: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            fields = line.split()
            if len(fields) != 6:
                raise HVRefError(f"expected 6 columns, got {len(fields)}")
            out.append(HVRefLine(fields[0], *(float(x) for x in fields[1:])))
        except (HVRefError, ValueError) as exc:
            if strict:
                raise HVRefError(f"line {lineno}: {exc}") from exc
            errors.append((lineno, str(exc)))
    return out, errors


# -- the store ----------------------------------------------------------------------


class ConfigStore:
    """File-backed store. Reads are lock-free; mutations are serialized."""

    def __init__(self, root: str | Path, clock=None, audit_log=None):
        self.root = Path(root)
        for sub in ("recipes", "snapshots", "hvref"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.audit = audit_log
        self._write_lock = threading.Lock()

    def _now_iso(self) -> str:
        from .archive.csvio import iso8601
        ts = self.clock.now_ms() if self.clock is not None else 0
        return iso8601(ts)

    def _record(self, op: str, name: str, user: str, detail: str = "") -> None:
        if self.audit is not None:
            ts = self.clock.now_ms() if self.clock is not None else 0
            self.audit.append({"type": "config_audit", "op": op, "name": name,
                               "user": user, "ts": ts, "detail": detail})

    # -- recipes ------------------------------------------------------------

    def save_recipe(self, name: str, items: dict[str, AlertConfig], user: str) -> Recipe:
        with self._write_lock:
            rdir = self.root / "recipes" / name
            rdir.mkdir(parents=True, exist_ok=True)
            versions = self.recipe_versions(name)
            version = (versions[-1] + 1) if versions else 1
            recipe = Recipe(name, version, user, self._now_iso(), dict(items))
            path = rdir / f"{version}.recipe"
            path.write_text(serialize_recipe(recipe), encoding="utf-8")
            self._record("save_recipe", f"{name}/{version}", user, f"{len(items)} items")
            return recipe

    def recipe_versions(self, name: str) -> list[int]:
        rdir = self.root / "recipes" / name
        if not rdir.is_dir():
            return []
        return sorted(int(p.stem) for p in rdir.glob("*.recipe"))

    def list_recipes(self) -> dict[str, list[int]]:
        out = {}
        for rdir in sorted((self.root / "recipes").iterdir()):
            if rdir.is_dir():
                out[rdir.name] = self.recipe_versions(rdir.name)
        return out

    def load_recipe(self, name: str, version: int | None = None) -> Recipe:
        versions = self.recipe_versions(name)
        if not versions:
            raise RecipeNotFound(name)
        version = version if version is not None else versions[-1]
        path = self.root / "recipes" / name / f"{version}.recipe"
        if not path.exists():
            raise RecipeNotFound(f"{name} v{version}")
        return parse_recipe(path.read_text(encoding="utf-8"))

    # -- snapshots ---------------------------------------------------------------

    def save_snapshot(self, name: str, pairs, user: str) -> ConfigurationSnapshot:
        with self._write_lock:
            snap = ConfigurationSnapshot(name, self._now_iso(), tuple(pairs))
            path = self.root / "snapshots" / f"{name}.snap"
            path.write_text(serialize_snapshot(snap), encoding="utf-8")
            self._record("save_snapshot", name, user, f"{len(snap.pairs)} mappings")
            return snap

    def load_snapshot(self, name: str) -> ConfigurationSnapshot:
        path = self.root / "snapshots" / f"{name}.snap"
        if not path.exists():
            raise SnapshotNotFound(name)
        return parse_snapshot(path.read_text(encoding="utf-8"))

    def list_snapshots(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "snapshots").glob("*.snap"))

    def diff(self, name_a: str, name_b: str) -> SnapshotDiff:
        return diff_snapshots(self.load_snapshot(name_a), self.load_snapshot(name_b))

    # -- hv reference files ----------------------------------------------------------

    def save_hvref(self, name: str, lines: list[HVRefLine], user: str) -> Path:
        with self._write_lock:
            path = self.root / "hvref" / f"{name}.ref"
            path.write_text(serialize_hvref(lines), encoding="utf-8")
            self._record("save_hvref", name, user, f"{len(lines)} channels")
            return path

    def load_hvref(self, name: str, strict: bool = True):
        path = self.root / "hvref" / f"{name}.ref"
        if not path.exists():
            raise HVRefError(f"no such reference file: {name}")
        return parse_hvref(path.read_text(encoding="utf-8"), strict=strict)

    def list_hvref(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "hvref").glob("*.ref"))
