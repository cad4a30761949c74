"""Software interlocks: declarative rules watching values/events and issuing
protective switch-off commands with a full audit trail.

Rule file grammar (exact grammar in docs/formats.md):

    PAIR <aliasA> <aliasB>
    PROTECT <magnet> <alias-pattern>...
    LVMAP <path-pattern> <lv-channel-alias>
    RULE <id> ON state(<path>, STATE|STATE) DO off(protected(<magnet>)) [COOLDOWN <s>]
    RULE <id> ON trip(<pattern>) WHERE pair(declared) DO off(partner) [COOLDOWN <s>]
    RULE <id> ON above(<pattern>, <threshold>) DO off(lv_of(target)) [COOLDOWN <s>]
    RULE <id> ON state(...)|trip(...)|above(...) DO off(<pattern>) [COOLDOWN <s>]

Evaluation is edge-triggered on arriving updates, with a periodic recheck as
a safety net against missed edges. Every firing appends an audit event
*before* any command is dispatched. Switch-offs are idempotent: a channel
already off (or heading off) is skipped.
"""
from __future__ import annotations

import fnmatch
import re
import threading
from dataclasses import dataclass, field
from typing import Callable

from . import states
from .values import Quality, SlowControlError, Update

DEFAULT_COOLDOWN_MS = 10_000

#: HV statuses that mean "already off or heading off": switch-off is a no-op
_OFFISH = {states.OFF, states.RAMPING_DOWN, states.TRIPPED}

_RULE_RE = re.compile(
    r"RULE\s+(?P<id>\S+)\s+ON\s+(?P<trig>\w+)\((?P<targs>[^)]*)\)"
    r"(?:\s+WHERE\s+(?P<pred>\w+)\((?P<pargs>[^)]*)\))?"
    r"\s+DO\s+(?P<act>\w+)\((?P<aargs>.*)\)"
    r"(?:\s+COOLDOWN\s+(?P<cool>\S+))?\s*$")


class RuleError(SlowControlError):
    pass


@dataclass
class InterlockRule:
    rule_id: str
    trigger: str                 # state | trip | above
    trigger_args: tuple
    predicate: str | None
    action: str                  # protected | partner | lv_of | pattern
    action_arg: str
    cooldown_ms: int = DEFAULT_COOLDOWN_MS
    armed: bool = True
    last_fired: int | None = None
    last_fired_by: dict = field(default_factory=dict)  # trigger source -> ts


@dataclass
class RuleBook:
    rules: list[InterlockRule] = field(default_factory=list)
    pairs: dict[str, str] = field(default_factory=dict)        # alias -> partner alias
    protected: dict[str, list[str]] = field(default_factory=dict)  # magnet -> patterns
    lvmap: list[tuple[str, str]] = field(default_factory=list)     # pattern -> lv alias

    @classmethod
    def parse(cls, text: str) -> "RuleBook":
        book = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                book._parse_line(line)
            except RuleError:
                raise
            except Exception as exc:
                raise RuleError(f"line {lineno}: cannot parse {raw!r}: {exc}") from exc
        return book

    def _parse_line(self, line: str) -> None:
        fields = line.split()
        if fields[0] == "PAIR":
            a, b = fields[1], fields[2]
            self.pairs[a] = b
            self.pairs[b] = a
        elif fields[0] == "PROTECT":
            self.protected.setdefault(fields[1], []).extend(fields[2:])
        elif fields[0] == "LVMAP":
            self.lvmap.append((fields[1], fields[2]))
        elif fields[0] == "RULE":
            m = _RULE_RE.match(line)
            if m is None:
                raise RuleError(f"bad RULE syntax: {line!r}")
            trig = m["trig"]
            targs = tuple(a.strip() for a in m["targs"].split(",")) if m["targs"] else ()
            if trig == "state":
                path, state_names = targs
                codes = frozenset(states.STATUS_CODES[s] for s in state_names.split("|"))
                trigger_args = (path, codes)
            elif trig == "trip":
                trigger_args = (targs[0],)
            elif trig == "above":
                trigger_args = (targs[0], float(targs[1]))
            else:
                raise RuleError(f"unknown trigger {trig!r}")
            aargs = m["aargs"].strip()
            if m["act"] != "off":
                raise RuleError(f"unknown action {m['act']!r}")
            inner = re.match(r"(\w+)\((.*)\)$", aargs)
            if inner is not None:
                action, action_arg = inner.group(1), inner.group(2)
                if action not in ("protected", "lv_of"):
                    raise RuleError(f"unknown action form {aargs!r}")
            elif aargs == "partner":
                action, action_arg = "partner", ""
            else:
                action, action_arg = "pattern", aargs
            cooldown = round(float(m["cool"]) * 1000) if m["cool"] else DEFAULT_COOLDOWN_MS
            self.rules.append(InterlockRule(m["id"], trig, trigger_args, m["pred"],
                                            action, action_arg, cooldown))
        else:
            raise RuleError(f"unknown record {fields[0]!r}")

    def serialize(self) -> str:
        out = []
        done = set()
        for a, b in self.pairs.items():
            key = tuple(sorted((a, b)))
            if key not in done:
                done.add(key)
                out.append(f"PAIR {key[0]} {key[1]}")
        for magnet, patterns in self.protected.items():
            out.append(f"PROTECT {magnet} {' '.join(patterns)}")
        for pattern, lv in self.lvmap:
            out.append(f"LVMAP {pattern} {lv}")
        for r in self.rules:
            if r.trigger == "state":
                names = "|".join(sorted(states.STATUS_NAMES[c] for c in r.trigger_args[1]))
                trig = f"state({r.trigger_args[0]}, {names})"
            elif r.trigger == "trip":
                trig = f"trip({r.trigger_args[0]})"
            else:
                trig = f"above({r.trigger_args[0]}, {r.trigger_args[1]:g})"
            pred = f" WHERE {r.predicate}(declared)" if r.predicate else ""
            act = {"protected": f"off(protected({r.action_arg}))",
                   "lv_of": "off(lv_of(target))",
                   "partner": "off(partner)",
                   "pattern": f"off({r.action_arg})"}[r.action]
            out.append(f"RULE {r.rule_id} ON {trig}{pred} DO {act} COOLDOWN {r.cooldown_ms / 1000:g}")
        return "\n".join(out) + "\n"


@dataclass
class ActionOutcome:
    target: str          # logical name commanded
    path: str            # hardware path of the power item
    issued: bool
    status: str          # OK | SKIPPED_OFF | TIMEOUT | ERROR:<msg> | DRY_RUN
    attempts: int = 0


@dataclass
class InterlockEvent:
    rule_id: str
    fired_at: int
    trigger_path: str
    trigger_value: object
    snapshot: dict
    actions: list[ActionOutcome] = field(default_factory=list)
    audit_seq: int | None = None


class InterlockEngine:
    """Single-sequencer evaluation: rule firings are totally ordered; the
    audit append precedes every command dispatch."""

    def __init__(self, book: RuleBook, clock,
                 command_send: Callable[[str, object], tuple[bool, str]],
                 state_reader: Callable[[str], object | None],
                 resolver: Callable[[str], str | None],
                 aliaser: Callable[[str], str | None] = None,
                 channel_catalog: Callable[[], list[str]] | None = None,
                 audit_log=None,
                 on_alert: Callable[[str, str, str], None] = None,
                 on_switched_off: Callable[[str, str], None] = None):
        self.book = book
        self.clock = clock
        self._send = command_send
        self._read = state_reader
        self._resolve = resolver
        self._alias = aliaser or (lambda p: None)
        self._catalog = channel_catalog
        self._audit = audit_log
        self._on_alert = on_alert or (lambda sev, path, msg: None)
        self._on_switched_off = on_switched_off or (lambda channel, rule: None)
        self._lock = threading.RLock()
        self._last_status: dict[str, int] = {}
        self._last_above: dict[tuple[str, str], bool] = {}
        self._trip_rule_cache: dict[str, list[InterlockRule]] = {}
        self._above_rule_cache: dict[str, list[InterlockRule]] = {}
        self._state_rules: dict[str, list[InterlockRule]] = {}
        for rule in book.rules:
            if rule.trigger == "state":
                self._state_rules.setdefault(rule.trigger_args[0], []).append(rule)
        self._any_above = any(r.trigger == "above" for r in book.rules)
        self.events: list[InterlockEvent] = []

    # -- rule management ------------------------------------------------------

    def rule(self, rule_id: str) -> InterlockRule:
        for r in self.book.rules:
            if r.rule_id == rule_id:
                return r
        raise RuleError(f"unknown rule {rule_id!r}")

    def arm(self, rule_id: str, armed: bool = True) -> None:
        self.rule(rule_id).armed = armed

    def list_rules(self) -> list[dict]:
        return [{"id": r.rule_id, "trigger": r.trigger, "armed": r.armed,
                 "cooldown_s": r.cooldown_ms / 1000, "last_fired": r.last_fired}
                for r in self.book.rules]

    # -- evaluation ----------------------------------------------------------------

    def process(self, update: Update, dry_run: bool = False) -> list[InterlockEvent]:
        """Edge-triggered evaluation of one arriving update."""
        with self._lock:
            out: list[InterlockEvent] = []
            path = update.path
            if path.endswith("/status"):
                channel = path[:-len("/status")]
                old = self._last_status.get(channel)
                self._last_status[channel] = update.value
                if update.value == states.TRIPPED and old != states.TRIPPED:
                    for rule in self._trip_rules_for(channel):
                        out.extend(self._fire_guarded(rule, update, dry_run,
                                                      trip_channel=channel))
            for rule in self._state_rules.get(path, ()):
                in_set = update.value in rule.trigger_args[1]
                key = (rule.rule_id, path)
                was = self._last_above.get(key, False)
                self._last_above[key] = in_set
                if in_set and not was:
                    out.extend(self._fire_guarded(rule, update, dry_run))
            for rule in self._above_rules_for(path) if self._any_above else ():
                threshold = rule.trigger_args[1]
                if update.quality is not Quality.VALID:
                    if isinstance(update.value, (int, float)) and update.value > threshold:
                        self._on_alert("WARNING", path,
                                       f"protection blind: {rule.rule_id} input quality "
                                       f"{update.quality.value}")
                    continue
                over = update.value > threshold
                key = (rule.rule_id, path)
                was = self._last_above.get(key, False)
                self._last_above[key] = over
                if over and not was:
                    out.extend(self._fire_guarded(rule, update, dry_run))
            return out

    def recheck(self, now_ms: int, dry_run: bool = False) -> list[InterlockEvent]:
        """Safety net at the fast cadence: re-fires a rule only when its
        condition still holds AND a state-changing command would be issued
        (so already-handled edges never duplicate events)."""
        with self._lock:
            out = []
            for rule in self.book.rules:
                if not rule.armed:
                    continue
                update = self._standing_trigger(rule)
                if update is None:
                    continue
                key = self._trip_channel(rule, update) or update.path
                if self._cooling(rule, now_ms, key):
                    continue
                targets = self._targets_for(rule, update, trip_channel=self._trip_channel(rule, update))
                live = [t for t in targets if self._needs_off(t[1])]
                if live:
                    out.extend(self._fire_guarded(rule, update, dry_run,
                                                  trip_channel=self._trip_channel(rule, update)))
            return out

    def _trip_channel(self, rule, update) -> str | None:
        if rule.trigger == "trip":
            return update.path[:-len("/status")]
        return None

    def _standing_trigger(self, rule) -> Update | None:
        if rule.trigger == "state":
            path = rule.trigger_args[0]
            leaf = self._read(path)
            if leaf is not None and leaf.quality is Quality.VALID \
                    and leaf.value in rule.trigger_args[1]:
                return Update(path, leaf.kind, leaf.value, leaf.timestamp, leaf.quality)
            return None
        if rule.trigger == "trip":
            for channel, status in self._last_status.items():
                if status == states.TRIPPED and self._matches(rule.trigger_args[0], channel):
                    leaf = self._read(channel + "/status")
                    if leaf is not None:
                        return Update(channel + "/status", leaf.kind, leaf.value,
                                      leaf.timestamp, leaf.quality)
            return None
        # above
        pattern, threshold = rule.trigger_args
        for key, over in self._last_above.items():
            if key[0] == rule.rule_id and over:
                leaf = self._read(key[1])
                if leaf is not None and leaf.quality is Quality.VALID and leaf.value > threshold:
                    return Update(key[1], leaf.kind, leaf.value, leaf.timestamp, leaf.quality)
        return None

    # -- firing ---------------------------------------------------------------------

    def _cooling(self, rule: InterlockRule, now: int, key: str) -> bool:
        """Cooldown is per trigger source: one flapping card must not mute
        protection for the others."""
        last = rule.last_fired_by.get(key)
        return last is not None and now - last < rule.cooldown_ms

    def _fire_guarded(self, rule: InterlockRule, update: Update, dry_run: bool,
                      trip_channel: str | None = None) -> list[InterlockEvent]:
        now = self.clock.now_ms()
        key = trip_channel or update.path
        if not rule.armed or self._cooling(rule, now, key):
            return []
        if rule.predicate == "pair" and trip_channel is not None:
            name = self._alias(trip_channel) or trip_channel
            if name not in self.book.pairs and trip_channel not in self.book.pairs:
                return []  # not a declared pair member: rule does not apply
        rule.last_fired = now
        rule.last_fired_by[key] = now
        targets = self._targets_for(rule, update, trip_channel)
        event = InterlockEvent(rule.rule_id, now, update.path, update.value,
                               snapshot={"value": update.value, "ts": update.timestamp,
                                         "quality": update.quality.value})
        for target, power_path in targets:
            if power_path is None:
                self._on_alert("FATAL", target,
                               f"interlock {rule.rule_id}: cannot resolve target {target!r}")
                event.actions.append(ActionOutcome(target, "", False, "ERROR:unresolvable"))
                continue
            if not self._needs_off(power_path):
                event.actions.append(ActionOutcome(target, power_path, False, "SKIPPED_OFF"))
                continue
            event.actions.append(ActionOutcome(target, power_path, True,
                                               "DRY_RUN" if dry_run else "PENDING"))
        if self._audit is not None:
            event.audit_seq = self._audit.append({
                "type": "interlock_fired", "rule": rule.rule_id, "ts": now,
                "trigger": update.path, "value": event.snapshot["value"],
                "planned": [a.target for a in event.actions if a.issued]})
        if not dry_run:
            for action in event.actions:
                if action.issued:
                    self._dispatch(rule, action)
            if self._audit is not None:
                self._audit.append({
                    "type": "interlock_acks", "rule": rule.rule_id, "ts": self.clock.now_ms(),
                    "audit_seq": event.audit_seq,
                    "acks": [{"target": a.target, "status": a.status} for a in event.actions]})
        self.events.append(event)
        return [event]

    def _dispatch(self, rule: InterlockRule, action: ActionOutcome) -> None:
        command_path = action.path
        for attempt in (1, 2):  # timeout is retried once
            action.attempts = attempt
            ok, message = self._send(command_path, False)
            if ok:
                action.status = "OK"
                self._on_switched_off(command_path[:-len("/power")], rule.rule_id)
                return
            if "timeout" not in message.lower():
                action.status = f"ERROR:{message}"
                break
        else:
            action.status = "TIMEOUT"
        self._on_alert("ERROR", command_path,
                       f"interlock {rule.rule_id}: switch-off failed ({action.status})")

    # -- target resolution ------------------------------------------------------------

    def _targets_for(self, rule, update, trip_channel=None) -> list[tuple[str, str | None]]:
        if rule.action == "protected":
            patterns = self.book.protected.get(rule.action_arg, [])
            return [(name, self._power_path(name))
                    for name in self._expand_patterns(patterns)]
        if rule.action == "partner":
            channel = trip_channel or update.path.rsplit("/", 1)[0]
            name = self._alias(channel) or channel
            partner = self.book.pairs.get(name) or self.book.pairs.get(channel)
            if partner is None:
                return []
            return [(partner, self._power_path(partner))]
        if rule.action == "lv_of":
            for pattern, lv in self.book.lvmap:
                if self._matches(pattern, update.path):
                    return [(lv, self._power_path(lv))]
            return [(f"lv_of({update.path})", None)]
        # pattern
        return [(name, self._power_path(name))
                for name in self._expand_patterns([rule.action_arg])]

    def _expand_patterns(self, patterns: list[str]) -> list[str]:
        out = []
        for name in self._known_channels():
            if any(self._matches(p, name) for p in patterns):
                out.append(name)
        return sorted(set(out))

    def _known_channels(self) -> list[str]:
        """Commandable channel names (the supervisor injects its catalog)."""
        return self._catalog() if self._catalog is not None else []

    def _power_path(self, name: str) -> str | None:
        hw = self._resolve(name)
        if hw is None:
            return None
        return f"{hw}/power"

    def _needs_off(self, power_path: str) -> bool:
        """Idempotence: only channels actually on (or ramping up) get a
        command."""
        channel = power_path[:-len("/power")]
        status = self._read(channel + "/status")
        if status is not None and status.value in _OFFISH:
            return False
        power = self._read(power_path)
        if power is not None and power.value is False and status is None:
            return False
        return True

    # -- matching -----------------------------------------------------------------------

    @staticmethod
    def _match_one(pattern: str, name: str) -> bool:
        return fnmatch.fnmatchcase(name, pattern)

    def _matches(self, pattern: str, path: str) -> bool:
        if self._match_one(pattern, path):
            return True
        alias = self._alias(path)
        return alias is not None and self._match_one(pattern, alias)

    def _trip_rules_for(self, channel: str) -> list[InterlockRule]:
        got = self._trip_rule_cache.get(channel)
        if got is None:
            got = [r for r in self.book.rules if r.trigger == "trip"
                   and self._matches(r.trigger_args[0], channel)]
            self._trip_rule_cache[channel] = got
        return got

    def _above_rules_for(self, path: str) -> list[InterlockRule]:
        got = self._above_rule_cache.get(path)
        if got is None:
            got = [r for r in self.book.rules if r.trigger == "above"
                   and self._matches(r.trigger_args[0], path)]
            self._above_rule_cache[path] = got
        return got
