"""Policy-driven historical storage: dead-band smoothing, trend queries,
CSV export, snapshots and replication."""
from .csvio import export_csv, iso8601, parse_csv, parse_iso8601
from .deadband import ArchivePolicy, ArchiveSample, DeadbandGate, should_store
from .downsample import downsample
from .replica import Replica
from .store import (ArchiveStore, ArchiveWriter, DuplicateTimestampError, EventLog,
                    StoreError, StoreFullError, TrendQuery, TrendSeries)

__all__ = [
    "ArchivePolicy", "ArchiveSample", "DeadbandGate", "should_store", "downsample",
    "export_csv", "parse_csv", "iso8601", "parse_iso8601", "Replica",
    "ArchiveStore", "ArchiveWriter", "EventLog", "TrendQuery", "TrendSeries",
    "StoreError", "StoreFullError", "DuplicateTimestampError",
]
