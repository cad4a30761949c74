"""Trend downsampling: largest-triangle-three-buckets, endpoints preserved."""
from __future__ import annotations

from .deadband import ArchiveSample


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def downsample(samples: list[ArchiveSample], max_points: int) -> list[ArchiveSample]:
    """Reduce `samples` (timestamp-ordered) to exactly `max_points`, keeping
    the first and last points. Numeric series use largest-triangle selection;
    anything else falls back to a uniform stride."""
    n = len(samples)
    if max_points <= 0:
        raise ValueError("max_points must be > 0")
    if n <= max_points:
        return list(samples)
    if max_points == 1:
        return [samples[0]]
    if max_points == 2:
        return [samples[0], samples[-1]]
    if not all(_is_number(s.value) for s in samples):
        step = (n - 1) / (max_points - 1)
        return [samples[round(i * step)] for i in range(max_points)]

    out = [samples[0]]
    bucket_size = (n - 2) / (max_points - 2)
    a = 0  # index of the previously selected point
    for i in range(max_points - 2):
        lo = int(i * bucket_size) + 1
        hi = min(int((i + 1) * bucket_size) + 1, n - 1)
        nxt_lo = hi
        nxt_hi = min(int((i + 2) * bucket_size) + 1, n)
        span = max(nxt_hi - nxt_lo, 1)
        avg_t = sum(samples[j].timestamp for j in range(nxt_lo, nxt_hi)) / span \
            if nxt_hi > nxt_lo else samples[n - 1].timestamp
        avg_v = sum(samples[j].value for j in range(nxt_lo, nxt_hi)) / span \
            if nxt_hi > nxt_lo else samples[n - 1].value
        at, av = samples[a].timestamp, samples[a].value
        best, best_area = lo, -1.0
        for j in range(lo, hi):
            sj = samples[j]
            area = abs((at - avg_t) * (sj.value - av) - (at - sj.timestamp) * (avg_v - av))
            if area > best_area:
                best, best_area = j, area
        out.append(samples[best])
        a = best
    out.append(samples[-1])
    return out
