"""Continuous replication to a second store: exactly-once by sequence number.

The replica persists its checkpoint (last applied seq) after each applied
sample; resuming from the checkpoint after a crash or disconnect yields no
gaps and no duplicates.
"""
from __future__ import annotations

import json
from pathlib import Path

from .store import ArchiveStore


class Replica:
    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        self.store = ArchiveStore(self.root)
        self._ckpt_path = self.root / "checkpoint.json"
        self.checkpoint = -1
        if self._ckpt_path.exists():
            self.checkpoint = json.loads(self._ckpt_path.read_text())["seq"]

    def apply(self, sample, kind_name: str) -> bool:
        """Apply one replicated sample; duplicates below the checkpoint are
        skipped. Returns True when the sample was appended."""
        if sample.seq <= self.checkpoint:
            return False
        self.store.append_replicated(sample, kind_name)
        self.checkpoint = sample.seq
        self._ckpt_path.write_text(json.dumps({"seq": self.checkpoint}))
        return True

    def sync_from(self, source: ArchiveStore, limit: int | None = None) -> int:
        """Pull samples after the checkpoint; returns how many were applied."""
        n = 0
        for sample, kind_name in source.read_since(self.checkpoint):
            self.apply(sample, kind_name)
            n += 1
            if limit is not None and n >= limit:
                break
        return n
