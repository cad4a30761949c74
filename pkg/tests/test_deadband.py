import json
import random
from pathlib import Path

import pytest

from slowctl.archive import ArchivePolicy, ArchiveSample, DeadbandGate, should_store
from slowctl.values import Quality

from .oracles import reference_deadband_decisions

GOLDEN = Path(__file__).parent / "golden" / "deadband_temperature.json"


def s(ts, value, quality=Quality.VALID):
    return ArchiveSample("p", ts, value, quality)


class TestRule:
    """The spec'd decision function, including the paper's 10-minute/1-degree
    temperature rule as boundary cases."""

    POLICY = ArchivePolicy(600_000, 1.0)

    def test_first_sample_always_stores(self):
        assert should_store(None, s(0, 20.0), self.POLICY)

    def test_change_beyond_band_stores(self):
        assert should_store(s(0, 20.0), s(300_000, 21.2), self.POLICY)

    def test_change_within_band_skips(self):
        assert not should_store(s(0, 20.0), s(300_000, 20.5), self.POLICY)

    def test_change_equal_to_band_skips(self):
        assert not should_store(s(0, 20.0), s(300_000, 21.0), self.POLICY)

    def test_backstop_stores_even_without_change(self):
        assert should_store(s(0, 20.0), s(601_000, 20.0), self.POLICY)
        assert should_store(s(0, 20.0), s(600_000, 20.0), self.POLICY)
        assert not should_store(s(0, 20.0), s(599_999, 20.0), self.POLICY)

    def test_non_numeric_change_only(self):
        policy = ArchivePolicy(600_000, None)
        assert not should_store(s(0, "RUN"), s(10, "RUN"), policy)
        assert should_store(s(0, "RUN"), s(10, "STOP"), policy)
        assert should_store(s(0, True), s(10, False), policy)
        assert not should_store(s(0, True), s(10, True), policy)

    def test_bool_ignores_dead_band(self):
        # bools are not numeric even though Python treats them as ints
        policy = ArchivePolicy(600_000, 5.0)
        assert should_store(s(0, True), s(10, False), policy)

    def test_array_uses_max_elementwise_delta(self):
        policy = ArchivePolicy(600_000, 1.0)
        assert not should_store(s(0, [1.0, 2.0]), s(10, [1.5, 2.5]), policy)
        assert should_store(s(0, [1.0, 2.0]), s(10, [1.0, 3.5]), policy)
        assert should_store(s(0, [1.0, 2.0]), s(10, [1.0]), policy)  # shape change

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ArchivePolicy(0, 1.0)
        with pytest.raises(ValueError):
            ArchivePolicy(1000, -0.1)


class TestGoldenTemperatureTrace:
    """Frozen store/skip pattern for the 10-minute/1-degree policy."""

    def test_implementation_matches_golden(self):
        golden = json.loads(GOLDEN.read_text())
        policy = ArchivePolicy(golden["max_interval_ms"], golden["dead_band"])
        gate = DeadbandGate(policy)
        stored = [i for i, (t, v) in enumerate(golden["trace"])
                  if gate.offer(s(t, v)) is not None]
        assert stored == golden["stored_indices"]

    def test_oracle_still_reproduces_golden(self):
        golden = json.loads(GOLDEN.read_text())
        decisions = reference_deadband_decisions(
            golden["trace"], golden["max_interval_ms"], golden["dead_band"])
        assert [i for i, d in enumerate(decisions) if d] == golden["stored_indices"]


class TestOracleEquivalence:
    def test_random_streams_match_oracle(self):
        rng = random.Random(20260809)
        for _ in range(25):
            max_interval = rng.choice([1_000, 10_000, 60_000, 600_000])
            dead_band = rng.choice([0.0, 0.1, 1.0, 5.0, None])
            t = 0
            stream = []
            value = rng.uniform(-10, 10)
            for _ in range(2_000):
                t += rng.randint(1, 20_000)
                value += rng.gauss(0, rng.choice([0.01, 0.5, 3.0]))
                stream.append((t, round(value, 6)))
            expected = reference_deadband_decisions(stream, max_interval, dead_band)
            policy = ArchivePolicy(max_interval, dead_band)
            gate = DeadbandGate(policy)
            got = [gate.offer(s(ts, v)) is not None for ts, v in stream]
            assert got == expected


class TestGateQualityTransitions:
    POLICY = ArchivePolicy(600_000, 1.0)

    def test_outage_markers_and_reset(self):
        gate = DeadbandGate(self.POLICY)
        assert gate.offer(s(0, 20.0)) is not None
        marker = gate.offer(s(1_000, 99.0, Quality.INVALID))
        assert marker is not None and marker.value is None
        assert marker.quality is Quality.INVALID
        # still invalid: no further markers
        assert gate.offer(s(2_000, 98.0, Quality.INVALID)) is None
        # flavor change invalid -> stale is a transition
        assert gate.offer(s(3_000, 98.0, Quality.STALE)) is not None
        # first valid sample after the outage always stores, even if unchanged
        back = gate.offer(s(4_000, 20.0))
        assert back is not None and back.value == 20.0

    def test_at_most_one_sample_per_timestamp(self):
        gate = DeadbandGate(self.POLICY)
        assert gate.offer(s(1_000, 20.0)) is not None
        assert gate.offer(s(1_000, 30.0)) is None  # same-timestamp write smoothed
        assert gate.offer(s(1_001, 30.0)) is not None
