import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowctl.alarms import (AlarmConfigError, AlarmEngine, AlertConfig, AlreadyAcknowledged,
                            Band, NotificationDispatcher, RecordNotFound, Severity,
                            bands_from_limits, file_sink)
from slowctl.clock import ManualClock
from slowctl.values import Quality

from .oracles import reference_alarm_events

INF = float("inf")

#: the worked example: OK [0,50), WARNING [50,70), ERROR elsewhere
BANDS = (Band(-INF, 0.0, Severity.ERROR), Band(0.0, 50.0, Severity.OK),
         Band(50.0, 70.0, Severity.WARNING), Band(70.0, INF, Severity.ERROR))


def config(ack=False, hysteresis=0.0):
    return AlertConfig("t", BANDS, ack_required=ack, hysteresis=hysteresis)


class TestConfigValidation:
    def test_gap_rejected(self):
        with pytest.raises(AlarmConfigError):
            AlertConfig("t", (Band(-INF, 0.0, Severity.ERROR), Band(1.0, INF, Severity.OK)))

    def test_domain_coverage_required(self):
        with pytest.raises(AlarmConfigError):
            AlertConfig("t", (Band(0.0, 1.0, Severity.OK),))

    def test_exactly_one_ok(self):
        with pytest.raises(AlarmConfigError):
            AlertConfig("t", (Band(-INF, 0.0, Severity.OK), Band(0.0, INF, Severity.OK)))

    def test_limits_builder(self):
        bands = bands_from_limits((0.0, 50.0), (-10.0, 70.0))
        cfg = AlertConfig("t", bands)
        assert cfg.classify(25.0) is Severity.OK
        assert cfg.classify(60.0) is Severity.WARNING
        assert cfg.classify(-60.0) is Severity.ERROR


class TestEvaluate:
    def test_ok_band(self):
        engine = AlarmEngine()
        engine.set_config("t", config())
        assert engine.evaluate("t", 42.0, 1000) == []
        assert engine.severity_of("t") is Severity.OK

    def test_came_with_error(self):
        engine = AlarmEngine()
        engine.set_config("t", config())
        engine.evaluate("t", 42.0, 1000)
        events = engine.evaluate("t", 75.0, 2000)
        assert [e.kind for e in events] == ["CAME"]
        assert events[0].severity is Severity.ERROR

    def test_sweep_event_sequence(self):
        engine = AlarmEngine()
        engine.set_config("t", config())
        events = []
        t = 0
        for v in list(range(0, 101)) + list(range(99, -1, -1)):
            t += 100
            events += engine.evaluate("t", float(v), t)
        assert [(e.kind, e.severity) for e in events] == [
            ("CAME", Severity.WARNING), ("SEVERITY_CHANGED", Severity.ERROR),
            ("SEVERITY_CHANGED", Severity.WARNING), ("WENT", Severity.OK)]

    def test_value_outside_bands_is_config_error(self):
        engine = AlarmEngine()
        engine.set_config("t", config())
        events = engine.evaluate("t", math.nan, 1000)
        assert [e.kind for e in events] == ["CONFIG_ERROR", "CAME"]
        assert engine.severity_of("t") is Severity.FATAL

    def test_invalid_quality_gated(self):
        engine = AlarmEngine()
        engine.set_config("t", config())
        assert engine.evaluate("t", 500.0, 1000, Quality.INVALID) == []
        assert engine.evaluate("t", 500.0, 1000, Quality.STALE) == []
        assert engine.severity_of("t") is Severity.OK

    def test_unconfigured_path_ignored(self):
        engine = AlarmEngine()
        assert engine.evaluate("nope", 9e9, 0) == []

    def test_flag_trigger(self):
        engine = AlarmEngine()
        engine.set_config("t", AlertConfig("t", flag_severity=Severity.ERROR))
        events = engine.evaluate("t", True, 10)
        assert [e.kind for e in events] == ["CAME"]
        events = engine.evaluate("t", False, 20)
        assert [e.kind for e in events] == ["WENT"]

    def test_hysteresis_suppresses_edge_flap(self):
        engine = AlarmEngine()
        engine.set_config("t", config(hysteresis=2.0))
        engine.evaluate("t", 60.0, 0)          # CAME WARNING
        assert engine.evaluate("t", 49.0, 1) == []   # within 2.0 of the 50 edge
        events = engine.evaluate("t", 47.0, 2)       # clearly back in OK
        assert [e.kind for e in events] == ["WENT"]


class TestAcknowledge:
    def _engine_with_alert(self, ack=True):
        engine = AlarmEngine()
        engine.set_config("t", config(ack=ack))
        [came] = engine.evaluate("t", 75.0, 1000)
        return engine, came.record_id

    def test_ack_active_alert_stays_listed(self):
        engine, rid = self._engine_with_alert()
        record = engine.acknowledge(rid, "shift", 2000)
        assert record.acknowledged_by == "shift"
        assert record.active and record.requires_attention

    def test_attention_until_went_and_ack(self):
        engine, rid = self._engine_with_alert()
        engine.acknowledge(rid, "shift", 2000)
        assert engine.record(rid).requires_attention  # acked but still active
        engine.evaluate("t", 10.0, 3000)  # WENT
        assert not engine.record(rid).requires_attention

    def test_gone_unacked_remains_then_clears_on_ack(self):
        engine, rid = self._engine_with_alert()
        engine.evaluate("t", 10.0, 3000)
        assert engine.record(rid).requires_attention
        engine.acknowledge(rid, "shift", 4000)
        assert not engine.record(rid).requires_attention

    def test_double_ack_idempotent(self):
        engine, rid = self._engine_with_alert()
        first = engine.acknowledge(rid, "shift", 2000)
        again = engine.acknowledge(rid, "other", 9000)
        assert again.acknowledged_at == first.acknowledged_at == 2000
        assert again.acknowledged_by == "shift"

    def test_racing_ack_single_winner(self):
        engine, rid = self._engine_with_alert()
        engine.acknowledge_racing(rid, "alice", 2000)
        with pytest.raises(AlreadyAcknowledged) as exc:
            engine.acknowledge_racing(rid, "bob", 2001)
        assert exc.value.record.acknowledged_by == "alice"

    def test_unknown_record(self):
        engine = AlarmEngine()
        with pytest.raises(RecordNotFound):
            engine.acknowledge(12345, "x", 0)

    def test_not_ack_required_leaves_attention_on_went(self):
        engine, rid = self._engine_with_alert(ack=False)
        engine.evaluate("t", 10.0, 3000)
        assert not engine.record(rid).requires_attention


class TestLifecycleProperty:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(min_value=-50, max_value=200,
                                        allow_nan=False, allow_infinity=False),
                              st.booleans()), max_size=60))
    def test_matches_reference_interpreter(self, stream):
        engine = AlarmEngine()
        engine.set_config("t", config())
        got = []
        t = 0
        for value, valid in stream:
            t += 1
            q = Quality.VALID if valid else Quality.INVALID
            got += [(e.kind, e.severity.name) for e in engine.evaluate("t", value, t, q)]
        oracle_bands = [(b.lo, b.hi, b.severity.name) for b in BANDS]
        want = [(k, s if k != "WENT" else "OK")
                for k, s in reference_alarm_events(stream, oracle_bands)]
        assert got == want

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["a/x", "a/y", "b/z"]),
                              st.floats(min_value=-50, max_value=200, allow_nan=False)),
                    max_size=80))
    def test_summary_incremental_equals_scratch(self, stream):
        engine = AlarmEngine()
        for p in ("a/x", "a/y", "b/z"):
            engine.set_config(p, config())
        t = 0
        for path, value in stream:
            t += 1
            engine.evaluate(path, value, t)
            maintained = {d: sc for d, sc in engine.summary().items() if sc[1] > 0}
            assert maintained == engine.recompute_summary()

    def test_per_record_event_grammar(self):
        """CAME (SEVERITY_CHANGED)* WENT per record, ACK interleaving after CAME."""
        engine = AlarmEngine()
        engine.set_config("t", config(ack=True))
        log: list = []
        import random
        rng = random.Random(3)
        t = 0
        for _ in range(400):
            t += 1
            v = rng.uniform(-20, 150)
            for e in engine.evaluate("t", v, t):
                log.append((e.kind, e.record_id))
                if e.kind == "CAME" and rng.random() < 0.5:
                    engine.acknowledge(e.record_id, "shift", t)
                    log.append(("ACK", e.record_id))
        by_record: dict[int, list[str]] = {}
        for kind, rid in log:
            by_record.setdefault(rid, []).append(kind)
        assert by_record
        for rid, kinds in by_record.items():
            core = [k for k in kinds if k != "ACK"]
            assert core[0] == "CAME"
            assert all(k == "SEVERITY_CHANGED" for k in core[1:-1])
            if len(core) > 1:
                assert core[-1] in ("WENT", "SEVERITY_CHANGED")
            for i, k in enumerate(kinds):
                if k == "ACK":
                    assert "CAME" in kinds[:i]


class TestReplaceConfigs:
    def test_commit_over_straddling_values(self):
        engine = AlarmEngine()
        values = {"a": (60.0, 500, Quality.VALID), "b": (30.0, 500, Quality.VALID)}
        engine.set_config("a", config())
        engine.set_config("b", config())
        engine.evaluate("a", *values["a"])  # WARNING active
        engine.evaluate("b", *values["b"])  # OK
        # new thresholds: what was WARNING is now OK, what was OK is now WARNING
        tight = AlertConfig("t", (Band(-INF, 0.0, Severity.ERROR), Band(0.0, 40.0, Severity.WARNING),
                                  Band(40.0, 70.0, Severity.OK), Band(70.0, INF, Severity.ERROR)))
        events = engine.replace_configs({"a": tight, "b": tight}, lambda p: values[p])
        kinds = {(e.path, e.kind) for e in events}
        assert ("a", "WENT") in kinds and ("b", "CAME") in kinds

    def test_identical_commit_is_quiet(self):
        engine = AlarmEngine()
        values = {"a": (60.0, 500, Quality.VALID)}
        engine.replace_configs({"a": config()}, lambda p: values[p])
        events = engine.replace_configs({"a": config()}, lambda p: values[p])
        assert events == []


class TestNotification:
    def _dispatcher(self, tmp_path, clock, experts=("alice", "bob"), sink=None):
        log = tmp_path / "notify.jsonl"
        return log, NotificationDispatcher(
            clock, sink or file_sink(log), experts_for=lambda det: list(experts),
            detector_of=lambda p: p.split("/")[0])

    def _engine(self, dispatcher):
        return AlarmEngine(on_event=dispatcher.on_event)

    def test_one_message_per_expert(self, tmp_path):
        clock = ManualClock()
        log, dispatcher = self._dispatcher(tmp_path, clock)
        engine = self._engine(dispatcher)
        engine.set_config("det/t", config())
        engine.evaluate("det/t", 75.0, 1000)  # ERROR
        lines = log.read_text().splitlines()
        assert len(lines) == 2
        assert dispatcher.delivered == 2

    def test_below_threshold_not_dispatched(self, tmp_path):
        clock = ManualClock()
        log, dispatcher = self._dispatcher(tmp_path, clock)
        engine = self._engine(dispatcher)
        engine.set_config("det/t", config())
        engine.evaluate("det/t", 60.0, 1000)  # WARNING < ERROR threshold
        assert not log.exists()

    def test_flapping_rate_limited(self, tmp_path):
        clock = ManualClock()
        log, dispatcher = self._dispatcher(tmp_path, clock, experts=("alice",))
        engine = self._engine(dispatcher)
        engine.set_config("det/t", config())
        for i in range(10):  # CAME/WENT x10 inside 60 s
            engine.evaluate("det/t", 75.0, clock.now_ms())
            clock.advance(3000)
            engine.evaluate("det/t", 10.0, clock.now_ms())
            clock.advance(3000)
        assert len(log.read_text().splitlines()) == 1
        assert dispatcher.suppressed == 9
        clock.advance(300_000)  # rate window passed: next flap dispatches again
        engine.evaluate("det/t", 75.0, clock.now_ms())
        assert len(log.read_text().splitlines()) == 2

    def test_sink_failure_retries_then_undelivered(self, tmp_path):
        clock = ManualClock()
        attempts = []

        def broken(payload, recipient):
            attempts.append(recipient)
            raise IOError("sink down")

        _, dispatcher = self._dispatcher(tmp_path, clock, experts=("alice",), sink=broken)
        engine = self._engine(dispatcher)
        engine.set_config("det/t", config())
        engine.evaluate("det/t", 75.0, 1000)
        assert len(attempts) == 3
        assert dispatcher.undelivered == 1
