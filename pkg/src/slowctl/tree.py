"""Hierarchical datapoint tree: typed leaves, aliases, subscription groups.

Paths are `a/b/c` with non-empty segments. A node is either internal or a
leaf, never both. Leaves carry (kind, value, timestamp, quality); invalid or
stale values never overwrite the last valid value, they only flip the quality
flag and land in the quality history.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .values import Kind, KindMismatchError, Quality, SlowControlError, Update, Value, coerce_value

MIN_GROUP_INTERVAL_MS = 100
MAX_GROUP_INTERVAL_MS = 3_600_000


class UnknownPathError(SlowControlError):
    pass


class UnknownAliasError(SlowControlError):
    pass


class DuplicatePathError(SlowControlError):
    pass


class PathConflictError(SlowControlError):
    pass


class AliasError(SlowControlError):
    pass


class GroupError(SlowControlError):
    pass


def split_path(path: str) -> list[str]:
    segments = path.split("/")
    if not path or any(not s for s in segments):
        raise PathConflictError(f"malformed path {path!r}")
    return segments


@dataclass(slots=True)
class LeafValue:
    kind: Kind
    value: Value
    timestamp: int
    quality: Quality


@dataclass(slots=True)
class _Leaf:
    kind: Kind
    value: Value = None
    timestamp: int = 0
    quality: Quality = Quality.VALID


@dataclass(slots=True)
class SubscriptionGroup:
    name: str
    interval_ms: int
    paths: list[str] = field(default_factory=list)


@dataclass
class TreeStats:
    updates_accepted: int = 0
    rejected_old_timestamp: int = 0


class DatapointTree:
    """Structure plus live values. All mutation goes through one lock; the
    change listeners are invoked synchronously after an accepted write."""

    def __init__(self):
        self._lock = threading.RLock()
        self._leaves: dict[str, _Leaf] = {}
        self._internal: set[str] = set()
        self._children: dict[str, dict[str, bool]] = {"": {}}  # node -> {segment: is_leaf}
        self._aliases: dict[str, str] = {}
        self._alias_by_path: dict[str, str] = {}
        self._groups: dict[str, SubscriptionGroup] = {}
        self._group_of: dict[str, str] = {}
        self._listeners: list[Callable[[Update], None]] = []
        self.stats = TreeStats()
        self.quality_history: deque = deque(maxlen=100_000)  # (path, ts, quality, raw value)

    # -- structure ---------------------------------------------------------

    def add_leaf(self, path: str, kind: Kind) -> None:
        with self._lock:
            self._check_new_path(path)
            self._insert(path, kind)

    def create_datapoints(self, template: dict[str, Kind], instances: Iterable[str]) -> list[str]:
        """Instantiate `template` (relative path -> kind) under each instance
        prefix. Atomic: any duplicate or conflict rejects the whole call."""
        instances = list(instances)
        if len(set(instances)) != len(instances):
            raise DuplicatePathError("duplicate instance names")
        for rel in template:
            split_path(rel)
        new_paths = [f"{inst}/{rel}" for inst in instances for rel in template]
        if len(set(new_paths)) != len(new_paths):
            raise DuplicatePathError("template/instance combination repeats a path")
        with self._lock:
            for p in new_paths:
                self._check_new_path(p)
            for inst in instances:
                for rel, kind in template.items():
                    self._insert(f"{inst}/{rel}", kind)
        return new_paths

    def _check_new_path(self, path: str) -> None:
        segments = split_path(path)
        if path in self._leaves:
            raise DuplicatePathError(f"path exists: {path}")
        if path in self._internal:
            raise PathConflictError(f"{path} is an internal node")
        prefix = ""
        for seg in segments[:-1]:
            prefix = f"{prefix}/{seg}" if prefix else seg
            if prefix in self._leaves:
                raise PathConflictError(f"{prefix} is a leaf, cannot contain {path}")

    def _insert(self, path: str, kind: Kind) -> None:
        segments = path.split("/")
        prefix = ""
        for seg in segments[:-1]:
            parent = prefix
            prefix = f"{prefix}/{seg}" if prefix else seg
            self._internal.add(prefix)
            self._children.setdefault(prefix, {})
            self._children[parent][seg] = False
        self._children[prefix if len(segments) > 1 else ""][segments[-1]] = True
        self._leaves[path] = _Leaf(kind=kind)

    def __contains__(self, path: str) -> bool:
        return path in self._leaves or path in self._internal

    def __len__(self) -> int:
        return len(self._leaves)

    def leaf_paths(self) -> list[str]:
        with self._lock:
            return list(self._leaves)

    def kind_of(self, path: str) -> Kind:
        leaf = self._leaves.get(path)
        if leaf is None:
            raise UnknownPathError(path)
        return leaf.kind

    def children(self, path: str = "") -> list[tuple[str, bool]]:
        """(segment, is_leaf) pairs under an internal node ('' = root)."""
        with self._lock:
            if path and path not in self._internal:
                if path in self._leaves:
                    return []
                raise UnknownPathError(path)
            return sorted(self._children.get(path, {}).items())

    def iter_subtree(self, prefix: str = "") -> Iterator[str]:
        with self._lock:
            if not prefix:
                yield from list(self._leaves)
                return
            if prefix in self._leaves:
                yield prefix
                return
            if prefix not in self._internal:
                raise UnknownPathError(prefix)
            head = prefix + "/"
            for p in list(self._leaves):
                if p.startswith(head):
                    yield p

    # -- values --------------------------------------------------------------

    def set_value(self, path: str, value: Value, timestamp: int,
                  quality: Quality = Quality.VALID) -> Update | None:
        """Write a leaf. Returns the change notification, or None when the
        write is rejected for carrying a timestamp older than the leaf's."""
        with self._lock:
            leaf = self._leaves.get(path)
            if leaf is None:
                raise UnknownPathError(path)
            value = coerce_value(leaf.kind, value)
            if timestamp < leaf.timestamp:
                self.stats.rejected_old_timestamp += 1
                return None
            if quality is Quality.VALID:
                leaf.value = value
            if quality is not leaf.quality:
                self.quality_history.append((path, timestamp, quality, value))
            leaf.timestamp = timestamp
            leaf.quality = quality
            self.stats.updates_accepted += 1
            note = Update(path, leaf.kind, value, timestamp, quality)
            listeners = list(self._listeners)
        for fn in listeners:
            fn(note)
        return note

    def set_quality(self, path: str, quality: Quality, timestamp: int) -> Update | None:
        """Supervisor-side quality override (watchdogs mark stale/invalid).
        Keeps the last valid value; emits a notification on transitions."""
        with self._lock:
            leaf = self._leaves.get(path)
            if leaf is None:
                raise UnknownPathError(path)
            if leaf.quality is quality:
                return None
            timestamp = max(timestamp, leaf.timestamp)
            leaf.quality = quality
            leaf.timestamp = timestamp
            self.quality_history.append((path, timestamp, quality, leaf.value))
            note = Update(path, leaf.kind, leaf.value, timestamp, quality)
            listeners = list(self._listeners)
        for fn in listeners:
            fn(note)
        return note

    def get(self, path: str) -> LeafValue:
        with self._lock:
            leaf = self._leaves.get(path)
            if leaf is None:
                raise UnknownPathError(path)
            return LeafValue(leaf.kind, leaf.value, leaf.timestamp, leaf.quality)

    def try_get(self, path: str) -> LeafValue | None:
        with self._lock:
            leaf = self._leaves.get(path)
            if leaf is None:
                return None
            return LeafValue(leaf.kind, leaf.value, leaf.timestamp, leaf.quality)

    def add_listener(self, fn: Callable[[Update], None]) -> None:
        with self._lock:
            self._listeners.append(fn)

    # -- aliases ---------------------------------------------------------------

    def add_alias(self, alias: str, path: str) -> None:
        with self._lock:
            self._check_alias(alias, path, self._aliases, self._alias_by_path)
            self._aliases[alias] = path
            self._alias_by_path[path] = alias

    def _check_alias(self, alias, path, table, reverse) -> None:
        if path not in self:
            raise UnknownPathError(f"alias target missing: {path}")
        if alias in self._leaves or alias in self._internal:
            raise AliasError(f"alias {alias!r} collides with a datapoint path")
        if alias in table and table[alias] != path:
            raise AliasError(f"alias {alias!r} already defined")
        if path in reverse and reverse[path] != alias:
            raise AliasError(f"target {path!r} already has alias {reverse[path]!r}")

    def resolve_alias(self, alias: str) -> str:
        with self._lock:
            try:
                return self._aliases[alias]
            except KeyError:
                raise UnknownAliasError(alias) from None

    def alias_of(self, path: str) -> str | None:
        with self._lock:
            return self._alias_by_path.get(path)

    def logical_name(self, path: str) -> str | None:
        """Alias-qualified name for a path: the nearest aliased ancestor plus
        the remaining suffix (inverse of resolve()). None when unaliased."""
        with self._lock:
            direct = self._alias_by_path.get(path)
            if direct is not None:
                return direct
            segments = path.split("/")
            for cut in range(len(segments) - 1, 0, -1):
                head = "/".join(segments[:cut])
                alias = self._alias_by_path.get(head)
                if alias is not None:
                    return alias + "/" + "/".join(segments[cut:])
            return None

    def aliases(self) -> dict[str, str]:
        with self._lock:
            return dict(self._aliases)

    def resolve(self, name: str) -> str:
        """Resolve a path-or-alias. Aliases may target internal nodes, so a
        longest-prefix match maps `alias/suffix` onto `target/suffix`."""
        with self._lock:
            if name in self._leaves or name in self._internal:
                return name
            if name in self._aliases:
                return self._aliases[name]
            segments = name.split("/")
            for cut in range(len(segments) - 1, 0, -1):
                head = "/".join(segments[:cut])
                if head in self._aliases:
                    candidate = self._aliases[head] + "/" + "/".join(segments[cut:])
                    if candidate in self:
                        return candidate
            raise UnknownPathError(name)

    def apply_alias_mapping(self, pairs: Iterable[tuple[str, str]]) -> None:
        """Replace the whole alias table atomically (snapshot application).
        `pairs` are (hardware path, alias); must form a bijection."""
        pairs = list(pairs)
        with self._lock:
            table: dict[str, str] = {}
            reverse: dict[str, str] = {}
            for path, alias in pairs:
                if path not in self:
                    raise UnknownPathError(f"snapshot maps missing path {path}")
                if alias in self._leaves or alias in self._internal:
                    raise AliasError(f"alias {alias!r} collides with a datapoint path")
                if alias in table or path in reverse:
                    raise AliasError(f"snapshot mapping is not a bijection at {alias!r}")
                table[alias] = path
                reverse[path] = alias
            self._aliases = table
            self._alias_by_path = reverse

    # -- subscription groups ----------------------------------------------------

    def define_group(self, name: str, interval_ms: int, paths: Iterable[str]) -> SubscriptionGroup:
        """Create or extend a group. Repeated definitions with the same name
        accumulate paths but must agree on the interval."""
        if not MIN_GROUP_INTERVAL_MS <= interval_ms <= MAX_GROUP_INTERVAL_MS:
            raise GroupError(f"interval {interval_ms} ms outside [0.1 s, 3600 s]")
        paths = list(paths)
        with self._lock:
            group = self._groups.get(name)
            if group is not None and group.interval_ms != interval_ms:
                raise GroupError(f"group {name!r} redefined with different interval")
            for p in paths:
                if p not in self._leaves:
                    raise UnknownPathError(p)
                owner = self._group_of.get(p)
                if owner is not None and owner != name:
                    raise GroupError(f"{p} already belongs to group {owner!r}")
            if group is None:
                group = SubscriptionGroup(name, interval_ms)
                self._groups[name] = group
            for p in paths:
                if self._group_of.get(p) != name:
                    group.paths.append(p)
                    self._group_of[p] = name
            return group

    def group(self, name: str) -> SubscriptionGroup:
        with self._lock:
            try:
                return self._groups[name]
            except KeyError:
                raise GroupError(f"unknown group {name!r}") from None

    def groups(self) -> list[SubscriptionGroup]:
        with self._lock:
            return list(self._groups.values())

    def group_of(self, path: str) -> str | None:
        with self._lock:
            return self._group_of.get(path)


class GroupNotifier:
    """Delivers per-group change batches at the group's polling interval.

    Changed leaves accumulate between ticks; each tick flushes at most one
    (the latest) update per path to the callback.
    """

    def __init__(self, tree: DatapointTree, clock,
                 callback: Callable[[str, list[Update]], None]):
        self._tree = tree
        self._clock = clock
        self._callback = callback
        self._pending: dict[str, dict[str, Update]] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.ready = threading.Event()  # set once the scheduler loop is live
        tree.add_listener(self._on_change)

    def _on_change(self, update: Update) -> None:
        group = self._tree.group_of(update.path)
        if group is None:
            return
        with self._lock:
            self._pending.setdefault(group, {})[update.path] = update

    def flush(self, group_name: str) -> list[Update]:
        with self._lock:
            batch = list(self._pending.pop(group_name, {}).values())
        if batch:
            self._callback(group_name, batch)
        return batch

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="group-notifier", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def _run(self) -> None:
        due = {g.name: self._clock.now_ms() + g.interval_ms for g in self._tree.groups()}
        self.ready.set()
        while not self._stop.is_set():
            groups = self._tree.groups()
            if not groups:
                self._clock.sleep(MIN_GROUP_INTERVAL_MS, self._stop)
                continue
            for g in groups:
                due.setdefault(g.name, self._clock.now_ms() + g.interval_ms)
            next_name, next_t = min(due.items(), key=lambda kv: kv[1])
            self._clock.sleep_until(next_t, self._stop)
            if self._stop.is_set():
                return
            self.flush(next_name)
            due[next_name] = next_t + self._tree.group(next_name).interval_ms
