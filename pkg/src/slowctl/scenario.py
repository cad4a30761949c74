"""Scenario files: reproducible end-to-end demo runs with assertions.

Grammar (`#` comments allowed):

    NAME <scenario name>
    MANIFEST <path to fleet manifest>
    RULES <path to interlock rules>          # optional
    RECIPE <path to recipe file>             # optional, committed at start
    USERS <path to users file>               # optional (default fixture users)
    SEED <int>
    SPEED <factor>
    DURATION <seconds>
    FAULT t=<sec> <fault line ...>
    ASSERT within <sec> <path-pattern> == <value-or-status-name>
    ASSERT within <sec> <path-pattern> quality == <valid|invalid|stale>

An ASSERT is anchored at the scripted time of the closest preceding FAULT
(t=0 when none precede it). All paths matching the pattern must satisfy the
predicate, with archived sample timestamps no later than anchor + within.
Assertions are evaluated against the supervisor's trend API, so transient
states the poller would miss are still seen (every change is archived).
"""
from __future__ import annotations

import fnmatch
import json
import logging
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from . import states
from .devices.faults import FaultEvent, parse_faults
from .fleet import Manifest
from .values import SlowControlError

logger = logging.getLogger(__name__)

SIM_DT_MS = 100


class ScenarioError(SlowControlError):
    pass


@dataclass(frozen=True)
class Assertion:
    anchor_t_ms: int          # scripted scenario time of the anchoring fault
    within_ms: int
    pattern: str
    kind: str                 # value | quality
    op: str                   # == | != | < | >
    expected: object

    def describe(self) -> str:
        what = "quality" if self.kind == "quality" else "value"
        return (f"within {self.within_ms / 1000:g}s of t={self.anchor_t_ms / 1000:g}s: "
                f"{self.pattern} {what} {self.op} {self.expected}")


@dataclass
class Scenario:
    name: str = "unnamed"
    manifest_path: str = ""
    rules_path: str | None = None
    recipe_path: str | None = None
    users_path: str | None = None
    seed: int = 0
    speed: float = 1.0
    duration_ms: int = 60_000
    faults: list[FaultEvent] = field(default_factory=list)
    assertions: list[Assertion] = field(default_factory=list)

    @classmethod
    def parse(cls, text: str, base_dir: Path | None = None) -> "Scenario":
        sc = cls()
        base = base_dir or Path(".")
        last_fault_t = 0
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            rest = rest.strip()
            try:
                if tag == "NAME":
                    sc.name = rest
                elif tag == "MANIFEST":
                    sc.manifest_path = str((base / rest))
                elif tag == "RULES":
                    sc.rules_path = str(base / rest)
                elif tag == "RECIPE":
                    sc.recipe_path = str(base / rest)
                elif tag == "USERS":
                    sc.users_path = str(base / rest)
                elif tag == "SEED":
                    sc.seed = int(rest)
                elif tag == "SPEED":
                    sc.speed = float(rest.rstrip("x"))
                elif tag == "DURATION":
                    sc.duration_ms = round(float(rest) * 1000)
                elif tag == "FAULT":
                    [fault] = parse_faults(rest)
                    sc.faults.append(fault)
                    last_fault_t = fault.t_ms
                elif tag == "ASSERT":
                    sc.assertions.append(cls._parse_assert(rest, last_fault_t))
                else:
                    raise ScenarioError(f"unknown record {tag!r}")
            except ScenarioError:
                raise
            except Exception as exc:
                raise ScenarioError(f"line {lineno}: cannot parse {raw!r}: {exc}") from exc
        return sc

    @staticmethod
    def _parse_assert(rest: str, anchor_t_ms: int) -> Assertion:
        fields = rest.split()
        if fields[0] != "within":
            raise ScenarioError(f"ASSERT must start with 'within': {rest!r}")
        within_ms = round(float(fields[1].rstrip("s")) * 1000)
        pattern = fields[2]
        if fields[3] == "quality":
            op, expected = fields[4], fields[5]
            if op != "==" or expected not in ("valid", "invalid", "stale"):
                raise ScenarioError(f"bad quality assertion: {rest!r}")
            return Assertion(anchor_t_ms, within_ms, pattern, "quality", op, expected)
        op, value = fields[3], fields[4]
        if op not in ("==", "!=", "<", ">"):
            raise ScenarioError(f"bad operator {op!r}")
        if value in states.STATUS_CODES:
            expected: object = states.STATUS_CODES[value]
        else:
            try:
                expected = int(value)
            except ValueError:
                try:
                    expected = float(value)
                except ValueError:
                    expected = value
        return Assertion(anchor_t_ms, within_ms, pattern, "value", op, expected)

    @classmethod
    def parse_file(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), base_dir=path.parent)


# -- assertion evaluation ------------------------------------------------------


def expand_pattern(manifest: Manifest, pattern: str) -> list[str]:
    """Hardware paths whose path or logical name matches the pattern."""
    alias_map = dict(manifest.aliases)
    out = []
    for path, _ in manifest.datapoints:
        if fnmatch.fnmatchcase(path, pattern):
            out.append(path)
            continue
        segments = path.split("/")
        for cut in range(len(segments), 0, -1):
            head = "/".join(segments[:cut])
            for alias, target in alias_map.items():
                if target == head:
                    logical = alias + path[len(head):]
                    if fnmatch.fnmatchcase(logical, pattern):
                        out.append(path)
                    break
            else:
                continue
            break
    return sorted(set(out))


def _satisfies(a: Assertion, sample: dict) -> bool:
    if a.kind == "quality":
        return sample["q"] == a.expected
    v = sample["v"]
    if v is None:
        return False
    if a.op == "==":
        return v == a.expected
    if a.op == "!=":
        return v != a.expected
    if a.op == "<":
        return v < a.expected
    return v > a.expected


@dataclass
class AssertionResult:
    assertion: Assertion
    passed: bool
    detail: str


def evaluate_assertion(a: Assertion, manifest: Manifest, t0_ms: int,
                       fetch_trend) -> AssertionResult:
    """fetch_trend(paths, t0, t1) -> {path: [ {t, v, q}, ... ]}."""
    paths = expand_pattern(manifest, a.pattern)
    if not paths:
        return AssertionResult(a, False, f"pattern {a.pattern!r} matches no datapoints")
    anchor = t0_ms + a.anchor_t_ms
    deadline = anchor + a.within_ms
    series = fetch_trend(paths, anchor, deadline + SIM_DT_MS + 1)
    late, never = [], []
    for path in paths:
        samples = series.get(path, [])
        hit = next((s for s in samples if _satisfies(a, s)), None)
        if hit is None:
            never.append(path)
        elif hit["t"] > deadline:
            late.append(path)
    if never or late:
        detail = []
        if never:
            detail.append(f"{len(never)} never satisfied (e.g. {never[0]})")
        if late:
            detail.append(f"{len(late)} too late (e.g. {late[0]})")
        return AssertionResult(a, False, "; ".join(detail))
    return AssertionResult(a, True, f"{len(paths)} paths within bound")


# -- the demo runner ---------------------------------------------------------------


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class _Api:
    def __init__(self, base: str):
        self.base = base
        self.token: str | None = None

    def call(self, method: str, path: str, body: dict | None = None,
             timeout: float = 5.0) -> dict:
        url = self.base + path
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(url, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read())

    def login(self, user: str, password: str) -> None:
        self.token = self.call("POST", "/api/login",
                               {"user": user, "password": password})["token"]


@dataclass
class DemoReport:
    scenario: str
    passed: bool
    results: list[AssertionResult]
    detail: str = ""

    def lines(self) -> list[str]:
        out = [f"scenario {self.scenario}: {'PASS' if self.passed else 'FAIL'}"
               + (f" ({self.detail})" if self.detail else "")]
        for r in self.results:
            out.append(f"  [{'PASS' if r.passed else 'FAIL'}] {r.assertion.describe()}"
                       f" -- {r.detail}")
        return out


def run_demo(scenario_path: str | Path, log_dir: str | Path | None = None,
             registry_port: int | None = None, api_port: int | None = None,
             wall_timeout_s: float = 120.0) -> DemoReport:
    """Launch registry, simulator fleet and supervisor as separate processes,
    let the scripted scenario play out, evaluate its assertions, tear down."""
    sc = Scenario.parse_file(scenario_path)
    if not sc.manifest_path:
        return DemoReport(sc.name, not sc.assertions, [],
                          detail="no manifest: vacuous scenario" if not sc.assertions
                          else "missing MANIFEST")
    manifest = Manifest.parse_file(sc.manifest_path)
    registry_port = registry_port or free_port()
    api_port = api_port or free_port()
    anchor_ms = int(time.time() * 1000)
    logger.info("scenario %s: anchor=%d speed=%g", sc.name, anchor_ms, sc.speed)

    import tempfile
    workdir = Path(log_dir) if log_dir else Path(tempfile.mkdtemp(prefix="slowctl-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    config_dir = workdir / "config"
    config_dir.mkdir(exist_ok=True)
    if sc.users_path:
        (config_dir / "users.txt").write_text(Path(sc.users_path).read_text())
    else:
        from .fleet import profile_mini
        (config_dir / "users.txt").write_text(profile_mini().users_text)

    faults_file = workdir / "faults.txt"
    faults_file.write_text("\n".join(
        f"t={f.t_ms / 1000:g} {f.action} {' '.join(f.args)}" for f in sc.faults) + "\n")

    env = dict(os.environ, SLOWCTL_REGISTRY=f"127.0.0.1:{registry_port}")
    common = [sys.executable, "-m", "slowctl"]
    clock_args = ["--speed", str(sc.speed), "--clock-anchor", str(anchor_ms)]
    procs: list[subprocess.Popen] = []

    def spawn(name: str, args: list[str]) -> subprocess.Popen:
        log = open(workdir / f"{name}.log", "w")
        p = subprocess.Popen(common + args, env=env, stdout=log, stderr=subprocess.STDOUT)
        procs.append(p)
        return p

    try:
        spawn("registry", ["registry", "--port", str(registry_port)] + clock_args)
        sup_args = ["supervisor", "--manifest", sc.manifest_path,
                    "--config-dir", str(config_dir), "--data-dir", str(workdir / "data"),
                    "--port", str(api_port)] + clock_args
        if sc.rules_path:
            sup_args += ["--rules", sc.rules_path]
        spawn("supervisor", sup_args)
        api = _Api(f"http://127.0.0.1:{api_port}")
        _wait_api(api, wall_timeout_s=15.0)

        api.login("dcs", "dcs")
        if sc.recipe_path:
            from .configstore import parse_recipe
            recipe = parse_recipe(Path(sc.recipe_path).read_text())
            items_spec = {}
            for alias, cfg in recipe.items.items():
                ok = next(b for b in cfg.bands if b.severity.name == "OK")
                lo = min(b.lo for b in cfg.bands if b.lo != float("-inf"))
                hi = max(b.hi for b in cfg.bands if b.hi != float("inf"))
                items_spec[alias] = {"ok": [ok.lo, ok.hi], "warn": [lo, hi],
                                     "ack": cfg.ack_required}
            api.call("POST", "/api/recipes", {"name": "scenario", "items": items_spec})
            api.call("POST", "/api/recipes/scenario/commit", {})

        sim_args = ["sim", "--manifest", sc.manifest_path, "--seed", str(sc.seed),
                    "--faults", str(faults_file),
                    "--duration", str(sc.duration_ms / 1000)] + clock_args
        sim = spawn("sim", sim_args)

        # time zero of the scenario: the simulator steps from the shared anchor
        t0 = anchor_ms
        horizon = t0 + sc.duration_ms
        deadline_wall = time.monotonic() + wall_timeout_s
        while time.monotonic() < deadline_wall:
            if sim.poll() is not None:
                break
            now_virtual = anchor_ms + (time.time() * 1000 - anchor_ms) * sc.speed
            if now_virtual >= horizon + 5_000:
                break
            time.sleep(0.2)

        def fetch_trend(paths, a, b):
            out = {}
            for i in range(0, len(paths), 40):
                chunk = paths[i:i + 40]
                reply = api.call("GET", f"/api/trend?paths={','.join(chunk)}&t0={a}&t1={b}",
                                 timeout=15.0)
                for s in reply["series"]:
                    out[s["path"]] = s["samples"]
            return out

        results = [evaluate_assertion(a, manifest, t0, fetch_trend)
                   for a in sc.assertions]
        passed = all(r.passed for r in results)
        return DemoReport(sc.name, passed, results)
    except Exception as exc:
        return DemoReport(sc.name, False, [], detail=f"runner failure: {exc}")
    finally:
        for p in procs:
            if p.poll() is None:
                p.send_signal(signal.SIGTERM)
        for p in procs:
            try:
                p.wait(timeout=5)
            except subprocess.TimeoutExpired:
                p.kill()


def _wait_api(api: _Api, wall_timeout_s: float) -> None:
    deadline = time.monotonic() + wall_timeout_s
    while time.monotonic() < deadline:
        try:
            api.call("GET", "/api/health", timeout=2.0)
            return
        except Exception:
            time.sleep(0.2)
    raise ScenarioError("supervisor API did not come up")
