"""Append-only segmented sample store with a sparse per-segment index.

Layout under a data directory:

    store.json                      -- {"version": 1, "segment_max": N}
    segments/seg-NNNNNNNN.jsonl     -- one JSON record per line, in seq order
    segments/seg-NNNNNNNN.idx.json  -- sidecar written when a segment seals
    events.jsonl                    -- shared append-only event/audit log

Record: {"s": seq, "p": path, "t": ts_ms, "k": kind, "v": value, "q": quality}
Null "v" marks a quality transition (outage marker). Segments are named by
the first seq they contain; replication reads sealed segments only.
"""
from __future__ import annotations

import json
import os
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from ..values import Kind, Quality, SlowControlError
from .deadband import ArchivePolicy, ArchiveSample, DeadbandGate
from .downsample import downsample

STORE_VERSION = 1
DEFAULT_SEGMENT_MAX = 100_000  # records per segment before rolling


class StoreError(SlowControlError):
    pass


class StoreFullError(StoreError):
    """Raised to the caller instead of silently dropping samples."""


class DuplicateTimestampError(StoreError):
    pass


@dataclass(slots=True)
class TrendQuery:
    paths: list[str]
    t0: int
    t1: int
    max_points: int | None = None

    def __post_init__(self):
        if self.t0 >= self.t1:
            raise StoreError(f"empty time range [{self.t0}, {self.t1})")


@dataclass(slots=True)
class TrendSeries:
    path: str
    samples: list[ArchiveSample]
    unknown_path: bool = False  # warning flag: nothing ever archived here


def _record(sample: ArchiveSample, kind: str) -> str:
    return json.dumps({"s": sample.seq, "p": sample.path, "t": sample.timestamp,
                       "k": kind, "v": sample.value, "q": sample.quality.value},
                      separators=(",", ":"))


def _parse(line: str) -> tuple[ArchiveSample, str]:
    d = json.loads(line)
    return (ArchiveSample(d["p"], d["t"], d["v"], Quality(d["q"]), d["s"]), d["k"])


class ArchiveStore:
    """One writer, many readers. Per-path timestamps strictly increase."""

    def __init__(self, data_dir: str | Path, segment_max: int = DEFAULT_SEGMENT_MAX,
                 max_total_samples: int | None = None):
        self.root = Path(data_dir)
        self.segments_dir = self.root / "segments"
        self.segments_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._meta_path = self.root / "store.json"
        if self._meta_path.exists():
            meta = json.loads(self._meta_path.read_text())
            if meta.get("version") != STORE_VERSION:
                raise StoreError(f"unsupported store version {meta.get('version')}")
            segment_max = meta.get("segment_max", segment_max)
        else:
            self._meta_path.write_text(json.dumps(
                {"version": STORE_VERSION, "segment_max": segment_max}))
        self.segment_max = segment_max
        self.max_total_samples = max_total_samples
        self._last_ts: dict[str, int] = {}
        self._kinds: dict[str, str] = {}
        self._count = 0
        self._next_seq = 0
        self._active: tuple[Path, object] | None = None  # (path, file handle)
        self._active_index: dict[str, int] = {}
        self._active_count = 0
        self._recover()

    # -- construction ------------------------------------------------------

    def _segment_files(self) -> list[Path]:
        return sorted(self.segments_dir.glob("seg-*.jsonl"))

    def _recover(self) -> None:
        """Rebuild per-path tails and the seq counter by scanning tails of
        existing segments; reopen the last unsealed segment for append."""
        for seg in self._segment_files():
            sealed = seg.with_suffix(".idx.json").exists()
            with open(seg, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
            for line in lines:
                if not line:
                    continue
                sample, kind = _parse(line)
                self._last_ts[sample.path] = sample.timestamp
                self._kinds[sample.path] = kind
                self._next_seq = max(self._next_seq, sample.seq + 1)
                self._count += 1
            if not sealed:
                fh2 = open(seg, "a", encoding="utf-8")
                self._active = (seg, fh2)
                self._active_count = len([ln for ln in lines if ln])

    # -- writing -----------------------------------------------------------

    def append(self, sample: ArchiveSample, kind: Kind | None = None,
               flush: bool = True) -> ArchiveSample:
        """Durable on return (flush=False defers the flush to the caller's
        batch boundary; see flush()). Returns the sample with its seq."""
        with self._lock:
            return self._append_locked(sample, kind, seq=None, flush=flush)

    def append_replicated(self, sample: ArchiveSample, kind_name: str) -> ArchiveSample:
        """Replica-side append preserving the origin seq."""
        with self._lock:
            if sample.seq < 0:
                raise StoreError("replicated sample lacks a seq")
            return self._append_locked(sample, None, seq=sample.seq, kind_name=kind_name)

    def _append_locked(self, sample, kind, seq, kind_name=None, flush=True) -> ArchiveSample:
        if self.max_total_samples is not None and self._count >= self.max_total_samples:
            raise StoreFullError(f"store at capacity ({self._count} samples)")
        last = self._last_ts.get(sample.path)
        if last is not None and sample.timestamp <= last:
            raise DuplicateTimestampError(
                f"{sample.path}: {sample.timestamp} <= stored {last}")
        if seq is None:
            seq = self._next_seq
        self._next_seq = max(self._next_seq, seq + 1)
        stored = ArchiveSample(sample.path, sample.timestamp, sample.value,
                               sample.quality, seq)
        kname = kind_name or (kind.value if kind is not None else self._kinds.get(sample.path, "float"))
        fh = self._active_handle()
        fh.write(_record(stored, kname) + "\n")
        if flush:
            fh.flush()
        self._last_ts[sample.path] = sample.timestamp
        self._kinds[sample.path] = kname
        self._count += 1
        self._active_count += 1
        if self._active_count >= self.segment_max:
            self._seal_active()
        return stored

    def _active_handle(self):
        if self._active is None:
            path = self.segments_dir / f"seg-{self._next_seq:012d}.jsonl"
            self._active = (path, open(path, "a", encoding="utf-8"))
            self._active_count = 0
        return self._active[1]

    def _seal_active(self) -> None:
        if self._active is None:
            return
        path, fh = self._active
        fh.flush()
        fh.close()
        index: dict[str, list[int]] = {}
        t0, t1 = None, None
        offset = 0
        with open(path, "r", encoding="utf-8") as rd:
            for line in rd:
                if line.strip():
                    d = json.loads(line)
                    index.setdefault(d["p"], []).append(offset)
                    t0 = d["t"] if t0 is None else min(t0, d["t"])
                    t1 = d["t"] if t1 is None else max(t1, d["t"])
                offset += len(line.encode("utf-8"))
        path.with_suffix(".idx.json").write_text(json.dumps(
            {"t0": t0, "t1": t1, "paths": {p: offs[::16] for p, offs in index.items()}}))
        self._active = None
        self._active_count = 0

    def flush(self) -> None:
        with self._lock:
            if self._active is not None:
                self._active[1].flush()

    def roll(self) -> None:
        """Seal the active segment so replication sees everything so far."""
        with self._lock:
            self._seal_active()

    def close(self) -> None:
        self.roll()

    # -- reading -----------------------------------------------------------

    @property
    def sample_count(self) -> int:
        with self._lock:
            return self._count

    def count_for(self, path: str) -> int:
        n = 0
        for s in self._iter_path(path, 0, 2**63 - 1):
            n += 1
        return n

    def path_counts(self) -> dict[str, int]:
        """Stored-sample count per path, in one pass over all segments."""
        counts: dict[str, int] = {}
        for seg in self._iter_segments_snapshot():
            with open(seg, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    p = json.loads(line)["p"]
                    counts[p] = counts.get(p, 0) + 1
        return counts

    def kind_name(self, path: str) -> str | None:
        with self._lock:
            return self._kinds.get(path)

    def known_paths(self) -> list[str]:
        with self._lock:
            return list(self._kinds)

    def _iter_segments_snapshot(self) -> list[Path]:
        with self._lock:
            if self._active is not None:
                self._active[1].flush()
            return self._segment_files()

    def _iter_path(self, path: str, t0: int, t1: int) -> Iterator[ArchiveSample]:
        for seg in self._iter_segments_snapshot():
            idx_file = seg.with_suffix(".idx.json")
            start_offset = 0
            if idx_file.exists():
                idx = json.loads(idx_file.read_text())
                if idx["t0"] is None or idx["t0"] >= t1:
                    continue
                offs = idx["paths"].get(path)
                if offs is None:
                    continue
                start_offset = offs[0]
            with open(seg, "r", encoding="utf-8") as fh:
                fh.seek(start_offset)
                for line in fh:
                    if not line.strip():
                        continue
                    d = json.loads(line)
                    if d["p"] != path:
                        continue
                    if d["t"] >= t1:
                        break  # per-path timestamps are ordered within the store
                    if d["t"] >= t0:
                        yield ArchiveSample(d["p"], d["t"], d["v"], Quality(d["q"]), d["s"])

    def query(self, q: TrendQuery) -> list[TrendSeries]:
        """Timestamp-ordered samples per path; optional downsampling keeps
        exactly max_points with endpoints preserved."""
        out = []
        for path in q.paths:
            known = path in self._kinds
            samples = list(self._iter_path(path, q.t0, q.t1)) if known else []
            if q.max_points is not None and len(samples) > q.max_points:
                samples = downsample(samples, q.max_points)
            out.append(TrendSeries(path, samples, unknown_path=not known))
        return out

    def read_since(self, checkpoint_seq: int) -> Iterator[tuple[ArchiveSample, str]]:
        """Replication source: (sample, kind name) with seq > checkpoint,
        in seq order, from sealed segments only."""
        for seg in self._segment_files():
            if not seg.with_suffix(".idx.json").exists():
                continue
            with open(seg, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    sample, kind = _parse(line)
                    if sample.seq > checkpoint_seq:
                        yield sample, kind

    def snapshot_to(self, dest: str | Path) -> int:
        """Local backup stand-in: copy metadata and sealed segments."""
        dest = Path(dest)
        (dest / "segments").mkdir(parents=True, exist_ok=True)
        shutil.copy2(self._meta_path, dest / "store.json")
        n = 0
        for seg in self._segment_files():
            idx = seg.with_suffix(".idx.json")
            if idx.exists():
                shutil.copy2(seg, dest / "segments" / seg.name)
                shutil.copy2(idx, dest / "segments" / idx.name)
                n += 1
        return n


class ArchiveWriter:
    """Bridges updates to the store: per-path policy lookup and dead-band
    gates. Policy resolution is injected (the fleet manifest provides it)."""

    def __init__(self, store: ArchiveStore, policy_for, default_policy: ArchivePolicy | None = None):
        self._store = store
        self._policy_for = policy_for
        self._default = default_policy
        self._gates: dict[str, DeadbandGate | None] = {}
        self.stored = 0
        self.smoothed = 0

    def gate_for(self, path: str) -> DeadbandGate | None:
        try:
            return self._gates[path]
        except KeyError:
            policy = self._policy_for(path) if self._policy_for else None
            if policy is None:
                policy = self._default
            gate = DeadbandGate(policy) if policy is not None else None
            self._gates[path] = gate
            return gate

    def offer(self, path: str, value, timestamp: int, quality: Quality, kind: Kind) -> bool:
        gate = self.gate_for(path)
        if gate is None:
            return False
        stored = gate.offer(ArchiveSample(path, timestamp, value, quality))
        if stored is None:
            self.smoothed += 1
            return False
        self._store.append(stored, kind, flush=False)  # flushed per batch
        self.stored += 1
        return True


class EventLog:
    """Append-only JSON-lines event/audit log with a global sequence.

    durable=True adds an fsync per append (audit trails that must survive a
    crash between persist and dispatch); plain flush otherwise.
    """

    def __init__(self, path: str | Path, durable: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.durable = durable
        self._lock = threading.Lock()
        self._seq = 0
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._seq = json.loads(line)["seq"] + 1
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, event: dict) -> int:
        """Persisted (flushed) before returning the assigned seq."""
        with self._lock:
            seq = self._seq
            self._seq += 1
            rec = {"seq": seq, **event}
            self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            self._fh.flush()
            if self.durable:
                os.fsync(self._fh.fileno())
            return seq

    def read(self, **match) -> list[dict]:
        with self._lock:
            self._fh.flush()
        out = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if all(rec.get(k) == v for k, v in match.items()):
                    out.append(rec)
        return out

    def close(self) -> None:
        self._fh.close()
