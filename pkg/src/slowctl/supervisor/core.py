"""The central service: ingests device updates, maintains the datapoint tree,
runs the alarm/archive/interlock pipeline, computes beam-derived quantities,
watches liveness and owns sessions and configuration operations.

Per-path processing order is update -> alarm -> archive -> interlock; paths
are sharded over worker threads, so cross-path ordering is unspecified while
per-path order is preserved.
"""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
from array import array
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import states
from ..alarms import (AlarmEngine, AlertConfig, AlertRecord, NotificationDispatcher,
                      Severity, bands_from_limits, file_sink)
from ..archive import (ArchivePolicy, ArchiveStore, ArchiveWriter, EventLog, TrendQuery,
                       export_csv)
from ..clock import SystemClock
from ..configstore import ConfigStore, HVRefLine
from ..fleet import Manifest
from ..interlock import InterlockEngine, RuleBook
from ..tree import UnknownPathError
from ..values import Kind, KindMismatchError, Quality, SlowControlError, Update
from .auth import Action, SessionManager, parse_users
from .liveness import LivenessBank

logger = logging.getLogger(__name__)

UI_FLUSH_MS = 1_000
FAST_TICK_MS = 1_500

CALO_WARN_REL = 0.1
CALO_ERROR_REL = 0.2
CALO_PANEL_ERROR_FRACTION = 0.01   # panel ERROR when > 1% of good channels in ERROR
CALO_PANEL_WARNING_MIN = 1         # panel WARNING when at least this many channels warn
POSITION_MM_PER_COUNT = 0.01


@dataclass
class IngestStats:
    received: int = 0
    processed: int = 0
    rejected_old_timestamp: int = 0
    kind_errors: int = 0
    unknown_paths: int = 0
    dropped: int = 0  # queues are unbounded: stays 0 or the run is broken

    def snapshot(self) -> dict:
        return self.__dict__.copy()


class EventBus:
    """Fan-out to UI stream subscribers; a slow consumer drops oldest-first
    rather than blocking ingest."""

    def __init__(self, maxsize: int = 10_000):
        self._subs: dict[int, queue.Queue] = {}
        self._lock = threading.Lock()
        self._next = 0
        self.maxsize = maxsize

    def subscribe(self) -> tuple[int, queue.Queue]:
        with self._lock:
            sid = self._next
            self._next += 1
            q: queue.Queue = queue.Queue(maxsize=self.maxsize)
            self._subs[sid] = q
            return sid, q

    def unsubscribe(self, sid: int) -> None:
        with self._lock:
            self._subs.pop(sid, None)

    def publish(self, event: dict) -> None:
        with self._lock:
            subs = list(self._subs.values())
        for q in subs:
            try:
                q.put_nowait(event)
            except queue.Full:
                try:
                    q.get_nowait()
                    q.put_nowait(event)
                except Exception:
                    pass


class Supervisor:
    def __init__(self, manifest: Manifest, config_dir: str | Path, data_dir: str | Path,
                 clock=None, command_sender=None, rules_text: str | None = None,
                 ping_fn=None, gateways: tuple[str, ...] = ()):
        self.manifest = manifest
        self.clock = clock or SystemClock()
        self.config_dir = Path(config_dir)
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.started_at = self.clock.now_ms()

        self.tree = manifest.build_tree()
        self.stats = IngestStats()
        self._stats_lock = threading.Lock()
        self._pending_spill: tuple[int, int] | None = None
        self._spill_lock = threading.Lock()
        self.bus = EventBus()
        self._latencies = array("d")
        self._lat_lock = threading.Lock()
        self._ui_pending: dict[str, Update] = {}
        self._ui_lock = threading.Lock()
        self._last_ui_flush = self.clock.now_ms()

        self.event_log = EventLog(self.data_dir / "events.jsonl")
        self.audit_log = EventLog(self.data_dir / "audit.jsonl", durable=True)
        self.store = ArchiveStore(self.data_dir / "archive")
        self.archiver = ArchiveWriter(self.store, self._policy_for)

        users_file = self.config_dir / "users.txt"
        users = parse_users(users_file.read_text()) if users_file.exists() else {}
        self.sessions = SessionManager(users, self.clock)

        self.notifier = NotificationDispatcher(
            self.clock, file_sink(self.data_dir / "notifications.jsonl"),
            experts_for=self._experts_for, detector_of=self._detector_of)
        self.alarms = AlarmEngine(detector_of=self._detector_of, event_log=self.event_log,
                                  on_event=self._on_alarm_event)

        self.command_sender = command_sender or (lambda p, v: (False, "no command path configured"))
        book = RuleBook.parse(rules_text) if rules_text else RuleBook()
        self.interlocks = InterlockEngine(
            book, self.clock, command_send=self._interlock_send,
            state_reader=self.tree.try_get, resolver=self._resolve_or_none,
            aliaser=self.tree.logical_name, channel_catalog=self._channel_catalog,
            audit_log=self.audit_log, on_alert=self._system_alert,
            on_switched_off=self._on_interlock_switch_off)

        self._beam_service: str | None = None
        self.liveness = LivenessBank(self.clock, on_verdict=self._on_verdict, ping_fn=ping_fn)
        self._setup_monitors(gateways)

        self.configs = ConfigStore(self.config_dir, self.clock, audit_log=self.audit_log)
        self._state_path = self.data_dir / "state.json"
        self._calo_reference: dict[str, list[float]] = {}
        self._setup_derived()
        self._restore_state()

        self._pump: IngestPump | None = None
        self._wire_streams: list = []
        self._housekeeper: threading.Thread | None = None
        self._stop = threading.Event()

    # -- construction helpers --------------------------------------------------

    def _policy_for(self, path: str) -> ArchivePolicy | None:
        rule = self.manifest.archive_policy_for(path)
        if rule is None:
            return None
        return ArchivePolicy(rule.max_interval_ms, rule.dead_band)

    def _detector_of(self, path: str) -> str:
        alias = self.tree.logical_name(path) if path in self.tree else None
        return self.manifest.detector_of(path, alias)

    def _experts_for(self, detector: str) -> list[str]:
        return sorted(u.name for u in self.sessions.users.values()
                      if u.role == "expert" and detector in u.detectors)

    def _resolve_or_none(self, name: str) -> str | None:
        try:
            return self.tree.resolve(name)
        except Exception:
            return None

    def _channel_catalog(self) -> list[str]:
        return list(self.tree.aliases())

    def _setup_monitors(self, gateways) -> None:
        for spec in self.manifest.devices:
            if spec.type == "plc":
                self.liveness.add_watchdog(spec.service, f"{spec.service}/watchdog",
                                           spec.service)
                self._install_liveness_alarm(spec.service)
            elif spec.type == "beam":
                supercycle = round(spec.get_float("supercycle", 40.0) * 1000)
                self.liveness.add_equipment(spec.service, spec.service,
                                            timeout_ms=supercycle * 2 + 10_000)
                self._install_liveness_alarm(spec.service)
                self._beam_service = spec.service
            else:
                self.liveness.add_equipment(spec.service, spec.service)
                self._install_liveness_alarm(spec.service)
        for host in gateways:
            self.liveness.add_gateway(f"gateway:{host}", host)
            self.alarms.set_config(f"sys/liveness/gateway:{host}",
                                   AlertConfig(f"sys/liveness/gateway:{host}",
                                               flag_severity=Severity.ERROR))

    def _install_liveness_alarm(self, monitor_id: str) -> None:
        path = f"sys/liveness/{monitor_id}"
        self.alarms.set_config(path, AlertConfig(path, flag_severity=Severity.WARNING))

    def _setup_derived(self) -> None:
        beam = next((d for d in self.manifest.devices if d.type == "beam"), None)
        if beam is not None:
            triggers = [f"t{i}" for i in range(beam.get_int("triggers", 8))]
            self._triggers = triggers
            self._calos = []
            for part in (beam.get("calos", "") or "").split(","):
                if part:
                    self._calos.append(part.split(":")[0])
            for t in triggers:
                self.tree.add_leaf(f"derived/trigger/{t}/rate", Kind.FLOAT)
            for calo in self._calos:
                for leaf, kind in (("n_ok", Kind.INT), ("n_warning", Kind.INT),
                                   ("n_error", Kind.INT), ("n_bad_reference", Kind.INT),
                                   ("panel", Kind.INT), ("states", Kind.INT_ARRAY)):
                    self.tree.add_leaf(f"derived/calo/{calo}/{leaf}", kind)
                panel = f"derived/calo/{calo}/panel"
                self.alarms.set_config(panel, AlertConfig(
                    panel, bands_from_limits((-0.5, 0.5), (-0.5, 1.5)), ack_required=True))
        else:
            self._triggers, self._calos = [], []
        self._position_bases = sorted({
            p.rsplit("/", 1)[0] for p, _ in self.manifest.datapoints
            if p.startswith("positions/") and p.endswith(("/x_counts", "/y_counts"))})

    # -- persistence of supervisor state ----------------------------------------

    def _save_state(self) -> None:
        state = {"active_recipe": getattr(self, "_active_recipe", None),
                 "calo_reference": self._calo_reference}
        self._state_path.write_text(json.dumps(state))

    def _restore_state(self) -> None:
        self._active_recipe = None
        if not self._state_path.exists():
            return
        state = json.loads(self._state_path.read_text())
        self._calo_reference = {k: list(v) for k, v in state.get("calo_reference", {}).items()}
        active = state.get("active_recipe")
        if active:
            try:
                recipe = self.configs.load_recipe(active[0], active[1])
                self._install_recipe(recipe, reevaluate=False)
                self._active_recipe = tuple(active)
            except SlowControlError as exc:
                logger.warning("could not restore recipe %s: %s", active, exc)

    # -- the pipeline ---------------------------------------------------------------

    def process_batch(self, updates: list[Update], enqueued_wall: float | None = None) -> None:
        for u in updates:
            self.process_update(u, enqueued_wall)
        self.store.flush()

    def process_update(self, u: Update, enqueued_wall: float | None = None) -> None:
        with self._stats_lock:
            self.stats.received += 1
        path = u.path
        if path.endswith("/heartbeat"):
            self.liveness.observe(path, u.value, self.clock.now_ms())
            with self._stats_lock:
                self.stats.processed += 1
            return
        quality = self.liveness.quality_override(path) or u.quality
        try:
            note = self.tree.set_value(path, u.value, u.timestamp, quality)
        except UnknownPathError:
            with self._stats_lock:
                self.stats.unknown_paths += 1
            return
        except KindMismatchError:
            with self._stats_lock:
                self.stats.kind_errors += 1
            return
        if note is None:
            with self._stats_lock:
                self.stats.rejected_old_timestamp += 1
            return
        self.liveness.observe(path, u.value, self.clock.now_ms())
        # alarms and interlocks see the raw incoming value with the effective
        # quality (gating happens inside; the raw value feeds blind-protection)
        self.alarms.evaluate(path, u.value, u.timestamp, quality)
        if enqueued_wall is not None:
            with self._lat_lock:
                self._latencies.append(time.monotonic() - enqueued_wall)
        self.archiver.offer(path, note.value, u.timestamp, quality, note.kind)
        self.interlocks.process(Update(path, note.kind, u.value, u.timestamp, quality))
        with self._ui_lock:
            self._ui_pending[path] = note
        if self._beam_service is not None and path.startswith(self._beam_service + "/"):
            if path == f"{self._beam_service}/spill":
                self._pending_spill = (u.value, u.timestamp)
            self._maybe_fire_spill()
        elif path.endswith(("/x_counts", "/y_counts")):
            self._on_position_counts(path, note.value, u.timestamp)
        with self._stats_lock:
            self.stats.processed += 1

    def _process_internal(self, path: str, kind: Kind, value, timestamp: int,
                          quality: Quality = Quality.VALID) -> None:
        """Derived-quantity writes flow through the same pipeline."""
        note = self.tree.set_value(path, value, timestamp, quality)
        if note is None:
            return
        self.alarms.evaluate(path, value, timestamp, quality)
        self.archiver.offer(path, note.value, timestamp, quality, kind)
        with self._ui_lock:
            self._ui_pending[path] = note

    # -- derived quantities ------------------------------------------------------------

    def _maybe_fire_spill(self) -> None:
        """Fire the spill-epoch derivation once every input of that epoch has
        landed in the tree (delivery order across items is not guaranteed)."""
        with self._spill_lock:
            if self._pending_spill is None:
                return
            spill_no, ts = self._pending_spill
            beam = self._beam_service
            inputs = [f"{beam}/flux"]
            inputs += [f"{beam}/trigger/{t}/count" for t in self._triggers]
            inputs += [f"{beam}/calo/{c}/amplitudes" for c in self._calos]
            for path in inputs:
                leaf = self.tree.try_get(path)
                if leaf is None or leaf.timestamp < ts:
                    return  # epoch incomplete: retry on the next beam update
            self._pending_spill = None
        self._on_spill(spill_no, ts)

    def _on_spill(self, spill_no: int, ts: int) -> None:
        """Spill epoch complete: normalized trigger rates and calorimeter
        channel states, each computed exactly once per spill."""
        beam = self._beam_service
        flux = self.tree.get(f"{beam}/flux").value
        for t in self._triggers:
            count = self.tree.get(f"{beam}/trigger/{t}/count").value
            if flux:
                self._process_internal(f"derived/trigger/{t}/rate", Kind.FLOAT,
                                       count / flux, ts)
            else:
                self._process_internal(f"derived/trigger/{t}/rate", Kind.FLOAT,
                                       0.0, ts, Quality.INVALID)
        for calo in self._calos:
            amps_leaf = self.tree.try_get(f"{beam}/calo/{calo}/amplitudes")
            if amps_leaf is None or amps_leaf.value is None:
                continue
            self._calo_states(calo, amps_leaf.value, ts)

    def _calo_states(self, calo: str, amplitudes: list[float], ts: int) -> None:
        reference = self._calo_reference.get(calo)
        if reference is None:
            # first spill becomes the reference until an expert chooses one
            self._calo_reference[calo] = list(amplitudes)
            self._save_state()
            reference = self._calo_reference[calo]
        if len(reference) != len(amplitudes):
            self._system_alert("FATAL", f"derived/calo/{calo}/panel",
                               "reference/channel count mismatch")
            return
        amps = np.asarray(amplitudes)
        ref = np.asarray(reference)
        bad = ref == 0.0
        safe_ref = np.where(bad, 1.0, ref)
        rel = np.abs((amps - ref) / safe_ref)
        state = np.zeros(len(amps), dtype=np.int64)
        state[rel > CALO_WARN_REL] = 1
        state[rel > CALO_ERROR_REL] = 2
        state[bad] = 3  # BAD_REFERENCE: excluded from the rollup thresholds
        n_ok = int(np.sum(state == 0))
        n_warn = int(np.sum(state == 1))
        n_err = int(np.sum(state == 2))
        n_bad = int(np.sum(bad))
        good = max(len(amps) - n_bad, 1)
        if n_err > CALO_PANEL_ERROR_FRACTION * good:
            panel = int(Severity.ERROR)
        elif n_warn >= CALO_PANEL_WARNING_MIN:
            panel = int(Severity.WARNING)
        else:
            panel = int(Severity.OK)
        base = f"derived/calo/{calo}"
        self._process_internal(f"{base}/n_ok", Kind.INT, n_ok, ts)
        self._process_internal(f"{base}/n_warning", Kind.INT, n_warn, ts)
        self._process_internal(f"{base}/n_error", Kind.INT, n_err, ts)
        self._process_internal(f"{base}/n_bad_reference", Kind.INT, n_bad, ts)
        self._process_internal(f"{base}/states", Kind.INT_ARRAY, state.tolist(), ts)
        self._process_internal(f"{base}/panel", Kind.INT, panel, ts)

    def set_calo_reference(self, calo: str, reference: list[float] | None = None) -> list[float]:
        """Expert chooses the reference: explicit amplitudes, or the latest
        published spill when none are given."""
        if reference is None:
            leaf = self.tree.try_get(f"{self._beam_service}/calo/{calo}/amplitudes")
            if leaf is None or leaf.value is None:
                raise SlowControlError(f"no amplitudes seen yet for {calo}")
            reference = list(leaf.value)
        self._calo_reference[calo] = list(reference)
        self._save_state()
        return reference

    def _on_position_counts(self, path: str, counts: int, ts: int) -> None:
        out = path.replace("_counts", "")
        if out in self.tree:
            self._process_internal(out, Kind.FLOAT, counts * POSITION_MM_PER_COUNT, ts)

    # -- alarms/liveness callbacks ---------------------------------------------------------

    def _on_alarm_event(self, event, record: AlertRecord | None) -> None:
        self.notifier.on_event(event, record)
        self.bus.publish({"type": "alert", "event": event.kind, "path": event.path,
                          "severity": event.severity.name, "record_id": event.record_id,
                          "ts": event.timestamp,
                          "record": record.to_dict() if record else None})

    def _system_alert(self, severity_name: str, path: str, message: str) -> None:
        sev = Severity[severity_name]
        sys_path = f"sys/{path}"
        if self.alarms.config_for(sys_path) is None:
            self.alarms.set_config(sys_path, AlertConfig(sys_path, flag_severity=sev))
        self.alarms.evaluate(sys_path, True, self.clock.now_ms())
        logger.warning("system alert %s on %s: %s", severity_name, path, message)

    def _on_interlock_switch_off(self, channel: str, rule_id: str) -> None:
        """A protective switch-off must be noticed even after it is over: an
        ack-required pulse alert stays on the attention list until both gone
        and acknowledged."""
        path = f"sys/interlock/{channel}"
        if self.alarms.config_for(path) is None:
            self.alarms.set_config(path, AlertConfig(
                path, flag_severity=Severity.ERROR, ack_required=True))
        now = self.clock.now_ms()
        self.alarms.evaluate(path, True, now)
        self.alarms.evaluate(path, False, now)

    def _on_verdict(self, monitor, alive: bool) -> None:
        now = self.clock.now_ms()
        flag_path = f"sys/liveness/{monitor.monitor_id}"
        self.alarms.evaluate(flag_path, not alive, now)
        if not alive and monitor.affected_prefix:
            degraded = 0
            for path in self.tree.iter_subtree(monitor.affected_prefix):
                if self.tree.set_quality(path, monitor.degrade_to, now) is not None:
                    leaf = self.tree.get(path)
                    self.archiver.offer(path, leaf.value, leaf.timestamp,
                                        monitor.degrade_to, leaf.kind)
                    degraded += 1
            logger.warning("%s DEAD: %d items marked %s", monitor.monitor_id,
                           degraded, monitor.degrade_to.value)
        self.bus.publish({"type": "health", "monitor": monitor.monitor_id,
                          "alive": alive, "ts": now})

    def _interlock_send(self, path: str, value) -> tuple[bool, str]:
        return self.command_sender(path, value)

    # -- housekeeping --------------------------------------------------------------------------

    def tick(self, now_ms: int | None = None) -> None:
        """Fast-cadence housekeeping: liveness verdicts, interlock recheck,
        gateway pings, UI flush."""
        now = now_ms if now_ms is not None else self.clock.now_ms()
        self.liveness.check(now)
        self.liveness.ping_gateways(now)
        self.interlocks.recheck(now)
        self.flush_ui(now)

    def flush_ui(self, now_ms: int | None = None) -> None:
        now = now_ms if now_ms is not None else self.clock.now_ms()
        with self._ui_lock:
            if not self._ui_pending:
                return
            pending, self._ui_pending = self._ui_pending, {}
        items = [{"path": u.path, "value": u.value if not isinstance(u.value, list) else None,
                  "ts": u.timestamp, "quality": u.quality.value} for u in pending.values()]
        self.bus.publish({"type": "values", "ts": now, "items": items})

    # -- operator operations ----------------------------------------------------------------------

    def acknowledge(self, record_id: int, user: str) -> AlertRecord:
        return self.alarms.acknowledge_racing(record_id, user, self.clock.now_ms())

    def save_recipe(self, name: str, items: dict[str, AlertConfig], user: str):
        offenders = [alias for alias in items if self._resolve_or_none(alias) is None]
        if offenders:
            raise SlowControlError(f"unknown aliases: {', '.join(sorted(offenders)[:5])}"
                                   + ("..." if len(offenders) > 5 else ""))
        return self.configs.save_recipe(name, items, user)

    def commit_recipe(self, name: str, version: int | None, user: str) -> int:
        recipe = self.configs.load_recipe(name, version)
        applied = self._install_recipe(recipe, reevaluate=True)
        self._active_recipe = (recipe.name, recipe.version)
        self._save_state()
        self.audit_log.append({"type": "config_audit", "op": "commit_recipe",
                               "name": f"{recipe.name}/{recipe.version}", "user": user,
                               "ts": self.clock.now_ms(), "detail": f"{applied} paths"})
        return applied

    def _install_recipe(self, recipe, reevaluate: bool) -> int:
        resolved: dict[str, AlertConfig] = {}
        offenders = []
        for alias, config in recipe.items.items():
            path = self._resolve_or_none(alias)
            if path is None:
                offenders.append(alias)
            else:
                resolved[path] = config
        if offenders:
            raise SlowControlError(
                f"recipe {recipe.name} has unresolvable aliases "
                f"({len(offenders)}): {', '.join(sorted(offenders)[:5])}")

        def read_value(path):
            leaf = self.tree.try_get(path)
            if leaf is None or leaf.value is None:
                return None
            return leaf.value, leaf.timestamp, leaf.quality

        self.alarms.replace_configs(resolved, read_value if reevaluate else None)
        return len(resolved)

    def take_snapshot(self, name: str, user: str):
        pairs = [(path, alias) for alias, path in sorted(self.tree.aliases().items())]
        return self.configs.save_snapshot(name, pairs, user)

    def apply_snapshot(self, name: str, user: str) -> int:
        snap = self.configs.load_snapshot(name)
        self.tree.apply_alias_mapping(snap.pairs)
        self.audit_log.append({"type": "config_audit", "op": "apply_snapshot",
                               "name": name, "user": user, "ts": self.clock.now_ms(),
                               "detail": f"{len(snap.pairs)} mappings"})
        return len(snap.pairs)

    def load_hvref(self, name: str, user: str, strict: bool = True) -> list[dict]:
        """Dispatch one settings command set per reference line. Strict mode
        validates the whole file (parse plus alias resolution) before any
        command goes out, so a failed load leaves device settings untouched."""
        lines, parse_errors = self.configs.load_hvref(name, strict=strict)
        if strict:
            offenders = [ref.alias for ref in lines
                         if self._resolve_or_none(ref.alias) is None]
            if offenders:
                raise SlowControlError(
                    f"reference file {name}: unresolvable aliases: "
                    f"{', '.join(offenders[:5])}")
        report = [{"line": lineno, "target": "", "status": f"PARSE_ERROR: {msg}"}
                  for lineno, msg in parse_errors]
        for ref in lines:
            hw = self._resolve_or_none(ref.alias)
            if hw is None:
                report.append({"target": ref.alias, "status": "UNRESOLVABLE"})
                continue
            results = []
            for item, value in (("v0set", ref.v0set), ("i0max", ref.i0max),
                                ("rup", ref.ramp_up), ("rdwn", ref.ramp_down),
                                ("trip", ref.trip_time)):
                ok, message = self.command_sender(f"{hw}/{item}", value)
                results.append(ok)
                if not ok:
                    report.append({"target": ref.alias, "status": f"FAILED {item}: {message}"})
                    break
            if all(results):
                report.append({"target": ref.alias, "status": "OK"})
        self.audit_log.append({"type": "config_audit", "op": "load_hvref", "name": name,
                               "user": user, "ts": self.clock.now_ms(),
                               "detail": f"{len(lines)} lines"})
        return report

    def hv_command(self, target: str, item: str, value) -> tuple[bool, str]:
        hw = self._resolve_or_none(target)
        if hw is None:
            return False, f"unknown channel {target}"
        return self.command_sender(f"{hw}/{item}", value)

    # -- queries ------------------------------------------------------------------------------------

    def browse(self, path: str = "") -> list[dict]:
        out = []
        for segment, is_leaf in self.tree.children(path):
            full = f"{path}/{segment}" if path else segment
            entry = {"path": full, "leaf": is_leaf}
            if is_leaf:
                leaf = self.tree.get(full)
                entry.update({"kind": leaf.kind.value, "value": leaf.value,
                              "ts": leaf.timestamp, "quality": leaf.quality.value})
            out.append(entry)
        return out

    def values(self, paths: list[str]) -> list[dict]:
        out = []
        for name in paths:
            hw = self._resolve_or_none(name)
            leaf = self.tree.try_get(hw) if hw else None
            if leaf is None:
                out.append({"path": name, "error": "unknown path"})
            else:
                out.append({"path": hw, "value": leaf.value, "ts": leaf.timestamp,
                            "quality": leaf.quality.value, "kind": leaf.kind.value})
        return out

    def trend(self, paths: list[str], t0: int, t1: int, max_points: int | None = None):
        resolved = [self._resolve_or_none(p) or p for p in paths]
        return self.store.query(TrendQuery(resolved, t0, t1, max_points))

    def trend_csv(self, paths: list[str], t0: int, t1: int,
                  max_points: int | None = None) -> str:
        return export_csv(self.trend(paths, t0, t1, max_points))

    def health(self) -> dict:
        lat = self.latency_stats()
        return {
            "uptime_ms": self.clock.now_ms() - self.started_at,
            "leaves": len(self.tree),
            "ingest": self.stats.snapshot(),
            "archive_samples": self.store.sample_count,
            "alerts_active": len(self.alarms.active_alerts()),
            "sessions": self.sessions.active_count(),
            "monitors": [{"id": m.monitor_id, "kind": m.kind, "alive": m.alive}
                         for m in self.liveness.monitors()],
            "latency": lat,
        }

    def latency_stats(self) -> dict:
        with self._lat_lock:
            if not self._latencies:
                return {"count": 0}
            data = np.asarray(self._latencies)
        return {"count": int(data.size), "p50_ms": float(np.percentile(data, 50) * 1000),
                "p99_ms": float(np.percentile(data, 99) * 1000),
                "max_ms": float(data.max() * 1000)}

    def summary(self) -> dict:
        return {det: {"severity": sev.name, "active": count}
                for det, (sev, count) in sorted(self.alarms.summary().items())}

    # -- service mode -----------------------------------------------------------------------------

    def start_pump(self, workers: int = 4) -> "IngestPump":
        self._pump = IngestPump(self, workers)
        self._pump.start()
        return self._pump

    def start_housekeeping(self) -> None:
        def run():
            next_t = self.clock.now_ms() + FAST_TICK_MS
            while not self._stop.is_set():
                self.clock.sleep_until(next_t, self._stop)
                if self._stop.is_set():
                    return
                self.tick()
                next_t += FAST_TICK_MS

        self._housekeeper = threading.Thread(target=run, name="housekeeping", daemon=True)
        self._housekeeper.start()

    def start_wire_ingest(self, registry_addr: tuple[str, int],
                          wait_services_s: float = 60.0) -> None:
        """Subscribe to every manifest group at its cadence, plus the per-
        service heartbeat items on change. Runs in the background, first
        waiting (bounded) for the fleet's services to appear in the registry
        so a supervisor started before its devices does not subscribe blind."""
        threading.Thread(target=self._wire_ingest_main,
                         args=(registry_addr, wait_services_s),
                         name="ingest-starter", daemon=True).start()

    def _wire_ingest_main(self, registry_addr, wait_services_s: float) -> None:
        from ..wire import SUB_INTERVAL, SUB_ON_CHANGE, RegistryClient, subscribe

        registry = RegistryClient(registry_addr, self.clock)
        services = [d.service for d in self.manifest.devices]
        deadline = time.monotonic() + wait_services_s
        missing = list(services)
        while missing and time.monotonic() < deadline and not self._stop.is_set():
            try:
                missing = [s for s in missing if registry.resolve(s) is None]
            except Exception:
                pass  # registry itself not up yet
            if missing:
                time.sleep(0.3)
        if missing:
            logger.warning("ingest starting with %d services unresolved (e.g. %s)",
                           len(missing), missing[0])
        if self._stop.is_set():
            return
        pump = self._pump or self.start_pump()
        for group in self.tree.groups():
            stream = subscribe(registry_addr, list(group.paths), SUB_INTERVAL,
                               period_ms=group.interval_ms, clock=self.clock,
                               auto_reconnect=True)
            self._wire_streams.append(stream)
            threading.Thread(target=self._drain_stream, args=(stream, pump),
                             name=f"ingest-{group.name}", daemon=True).start()
        hb = subscribe(registry_addr, [f"{s}/heartbeat" for s in services],
                       SUB_ON_CHANGE, clock=self.clock, auto_reconnect=True)
        self._wire_streams.append(hb)
        threading.Thread(target=self._drain_stream, args=(hb, pump),
                         name="ingest-heartbeats", daemon=True).start()

    def _drain_stream(self, stream, pump) -> None:
        while not self._stop.is_set() and not stream.closed:
            u = stream.get(timeout=0.5)
            if u is not None:
                batch = [u] + stream.drain()
                pump.submit(batch)

    def stop(self) -> None:
        self._stop.set()
        for stream in self._wire_streams:
            stream.close()
        if self._pump is not None:
            self._pump.stop()
        if self._housekeeper is not None:
            self._housekeeper.join(timeout=3)
        self.store.close()


class IngestPump:
    """Sharded worker pool: per-path order preserved (stable hash shard),
    queues unbounded so nothing is ever dropped."""

    def __init__(self, supervisor: Supervisor, workers: int = 4):
        self.supervisor = supervisor
        self.workers = workers
        self._queues: list[queue.Queue] = [queue.Queue() for _ in range(workers)]
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self.submitted = 0
        self._done = [0] * workers

    @staticmethod
    def shard_key(path: str) -> str:
        """First two segments: one device service stays on one shard, so a
        device batch is processed in publish order."""
        i = path.find("/")
        if i < 0:
            return path
        j = path.find("/", i + 1)
        return path if j < 0 else path[:j]

    def submit(self, updates: list[Update]) -> None:
        enq = time.monotonic()
        shards: list[list[Update]] = [[] for _ in range(self.workers)]
        for u in updates:
            shards[hash(self.shard_key(u.path)) % self.workers].append(u)
        for i, shard in enumerate(shards):
            if shard:
                self._queues[i].put((shard, enq))
        self.submitted += len(updates)

    def start(self) -> None:
        for i in range(self.workers):
            t = threading.Thread(target=self._work, args=(i,), name=f"ingest-{i}", daemon=True)
            t.start()
            self._threads.append(t)

    def _work(self, i: int) -> None:
        q = self._queues[i]
        while True:
            try:
                item = q.get(timeout=0.2)
            except queue.Empty:
                if self._stop.is_set():
                    return
                continue
            if item is None:
                return
            shard, enq = item
            done = self._done[i]
            for u in shard:
                self.supervisor.process_update(u, enq)
                done += 1
                self._done[i] = done
            self.supervisor.store.flush()

    @property
    def completed(self) -> int:
        return sum(self._done)

    def drain(self, timeout: float = 60.0) -> bool:
        """Wait until every submitted update has been processed."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.completed >= self.submitted:
                return True
            time.sleep(0.005)
        return False

    def stop(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=3)
