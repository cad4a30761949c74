"""CSV export of trend queries, RFC-4180, and the inverse parser.

Header: path,timestamp_iso8601,value,quality. Values are JSON literals so
kinds survive the round trip (floats via repr, strings quoted, arrays as
JSON arrays, outage markers as null); the csv module handles quoting.
"""
from __future__ import annotations

import csv
import io
import json
from datetime import datetime, timezone

from ..values import Quality
from .deadband import ArchiveSample

CSV_HEADER = ["path", "timestamp_iso8601", "value", "quality"]


def iso8601(ts_ms: int) -> str:
    dt = datetime.fromtimestamp(ts_ms / 1000, tz=timezone.utc)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def parse_iso8601(text: str) -> int:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return round(dt.timestamp() * 1000)


def export_csv(series_list) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\r\n")  # RFC-4180 line endings
    writer.writerow(CSV_HEADER)
    for series in series_list:
        for s in series.samples:
            writer.writerow([s.path, iso8601(s.timestamp),
                             json.dumps(s.value), s.quality.value])
    return out.getvalue()


def parse_csv(text: str) -> list[ArchiveSample]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {header!r}")
    samples = []
    for row in reader:
        if not row:
            continue
        path, ts, value, quality = row
        samples.append(ArchiveSample(path, parse_iso8601(ts),
                                     json.loads(value), Quality(quality)))
    return samples
