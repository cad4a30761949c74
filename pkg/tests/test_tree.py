import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slowctl.clock import ManualClock
from slowctl.tree import (AliasError, DatapointTree, DuplicatePathError, GroupError,
                          GroupNotifier, PathConflictError, UnknownAliasError,
                          UnknownPathError)
from slowctl.values import Kind, KindMismatchError, Quality


@pytest.fixture
def tree():
    t = DatapointTree()
    t.add_leaf("hv/ch0/vmon", Kind.FLOAT)
    t.add_leaf("hv/ch0/status", Kind.INT)
    t.add_leaf("env/label", Kind.STRING)
    return t


class TestStructure:
    def test_create_datapoints_product(self):
        t = DatapointTree()
        template = {"vmon": Kind.FLOAT, "imon": Kind.FLOAT, "status": Kind.INT}
        paths = t.create_datapoints(template, ["ch0", "ch1"])
        assert len(paths) == 6
        assert sorted(paths) == sorted(t.leaf_paths())

    def test_create_datapoints_empty_instances(self):
        t = DatapointTree()
        assert t.create_datapoints({"v": Kind.FLOAT}, []) == []
        assert len(t) == 0

    def test_duplicate_path_rejected_atomically(self):
        t = DatapointTree()
        t.add_leaf("a/b", Kind.FLOAT)
        with pytest.raises(DuplicatePathError):
            t.create_datapoints({"b": Kind.FLOAT, "c": Kind.FLOAT}, ["a"])
        # nothing from the failed call leaked in
        assert t.leaf_paths() == ["a/b"]

    def test_leaf_cannot_become_internal(self):
        t = DatapointTree()
        t.add_leaf("a/b", Kind.FLOAT)
        with pytest.raises(PathConflictError):
            t.add_leaf("a/b/c", Kind.FLOAT)

    def test_internal_cannot_become_leaf(self):
        t = DatapointTree()
        t.add_leaf("a/b/c", Kind.FLOAT)
        with pytest.raises(PathConflictError):
            t.add_leaf("a/b", Kind.FLOAT)

    def test_malformed_paths(self):
        t = DatapointTree()
        for bad in ("", "/x", "x/", "a//b"):
            with pytest.raises(PathConflictError):
                t.add_leaf(bad, Kind.FLOAT)

    def test_children_listing(self, tree):
        assert tree.children("") == [("env", False), ("hv", False)]
        assert tree.children("hv/ch0") == [("status", True), ("vmon", True)]


class TestValues:
    def test_set_get_round_trip(self, tree):
        note = tree.set_value("hv/ch0/vmon", 3.14, 1000)
        assert note is not None and note.value == 3.14
        leaf = tree.get("hv/ch0/vmon")
        assert leaf.value == 3.14 and leaf.kind is Kind.FLOAT
        assert leaf.timestamp == 1000 and leaf.quality is Quality.VALID

    def test_kind_mismatch(self, tree):
        with pytest.raises(KindMismatchError):
            tree.set_value("hv/ch0/vmon", "oops", 1000)
        with pytest.raises(KindMismatchError):
            tree.set_value("hv/ch0/status", 1.5, 1000)
        with pytest.raises(KindMismatchError):
            tree.set_value("hv/ch0/status", True, 1000)

    def test_unknown_path(self, tree):
        with pytest.raises(UnknownPathError):
            tree.set_value("hv/ch9/vmon", 1.0, 0)

    def test_old_timestamp_rejected_and_counted(self, tree):
        tree.set_value("hv/ch0/vmon", 1.0, 2000)
        assert tree.set_value("hv/ch0/vmon", 2.0, 1999) is None
        assert tree.get("hv/ch0/vmon").value == 1.0
        assert tree.stats.rejected_old_timestamp == 1

    def test_equal_timestamp_accepted(self, tree):
        tree.set_value("hv/ch0/vmon", 1.0, 2000)
        note = tree.set_value("hv/ch0/vmon", 2.0, 2000)
        assert note is not None
        assert tree.get("hv/ch0/vmon").value == 2.0

    def test_invalid_quality_keeps_last_valid_value(self, tree):
        tree.set_value("hv/ch0/vmon", 5.0, 1000)
        tree.set_value("hv/ch0/vmon", 99.0, 2000, Quality.INVALID)
        leaf = tree.get("hv/ch0/vmon")
        assert leaf.value == 5.0
        assert leaf.quality is Quality.INVALID
        assert tree.quality_history[-1][0] == "hv/ch0/vmon"

    def test_mark_stale_then_revalidate(self, tree):
        tree.set_value("hv/ch0/vmon", 5.0, 1000)
        note = tree.set_quality("hv/ch0/vmon", Quality.STALE, 1500)
        assert note is not None and note.quality is Quality.STALE
        tree.set_value("hv/ch0/vmon", 5.5, 2000)
        assert tree.get("hv/ch0/vmon").quality is Quality.VALID


class TestAliases:
    def test_resolve_alias(self, tree):
        tree.add_alias("ecal/hv0", "hv/ch0")
        assert tree.resolve_alias("ecal/hv0") == "hv/ch0"

    def test_unknown_alias_distinct_from_unknown_path(self, tree):
        with pytest.raises(UnknownAliasError):
            tree.resolve_alias("nope")
        with pytest.raises(UnknownPathError):
            tree.resolve("nope")

    def test_alias_prefix_resolution(self, tree):
        tree.add_alias("ecal/hv0", "hv/ch0")
        assert tree.resolve("ecal/hv0/vmon") == "hv/ch0/vmon"

    def test_bijection_enforced(self, tree):
        tree.add_alias("a1", "hv/ch0/vmon")
        with pytest.raises(AliasError):
            tree.add_alias("a2", "hv/ch0/vmon")  # second alias, same target
        with pytest.raises(AliasError):
            tree.add_alias("env/label", "hv/ch0/status")  # collides with a path

    def test_snapshot_remap(self, tree):
        tree.add_alias("ecal/hv0", "hv/ch0/vmon")
        tree.apply_alias_mapping([("hv/ch0/status", "ecal/hv0")])
        assert tree.resolve_alias("ecal/hv0") == "hv/ch0/status"

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.permutations(range(6)), min_size=1, max_size=8))
    def test_alias_bijection_after_random_remaps(self, remaps):
        t = DatapointTree()
        paths = [f"dev/ch{i}/v" for i in range(6)]
        for p in paths:
            t.add_leaf(p, Kind.FLOAT)
        aliases = [f"log/a{i}" for i in range(6)]
        for perm in remaps:
            t.apply_alias_mapping([(paths[perm[i]], aliases[i]) for i in range(6)])
            table = t.aliases()
            assert len(table) == 6
            assert len(set(table.values())) == 6  # bijection held
            for a, p in table.items():
                assert t.resolve_alias(a) == p


class TestGroups:
    def test_interval_bounds(self, tree):
        with pytest.raises(GroupError):
            tree.define_group("g", 99, ["hv/ch0/vmon"])
        with pytest.raises(GroupError):
            tree.define_group("g", 3_600_001, ["hv/ch0/vmon"])

    def test_item_in_one_group_only(self, tree):
        tree.define_group("fast", 1500, ["hv/ch0/vmon"])
        with pytest.raises(GroupError):
            tree.define_group("slow", 120_000, ["hv/ch0/vmon"])

    def test_accumulating_definitions(self, tree):
        tree.define_group("fast", 1500, ["hv/ch0/vmon"])
        tree.define_group("fast", 1500, ["hv/ch0/status"])
        assert sorted(tree.group("fast").paths) == ["hv/ch0/status", "hv/ch0/vmon"]

    def test_group_cadence(self, tree):
        """Steady state: batches spaced exactly at the group interval when
        time is advanced in lockstep (well within the +-10% contract)."""
        import time

        clock = ManualClock()
        tree.define_group("fast", 1500, ["hv/ch0/vmon"])
        tree.define_group("slow", 120_000, ["hv/ch0/status"])
        batches: list[tuple[str, int]] = []
        notifier = GroupNotifier(tree, clock, lambda g, b: batches.append((g, clock.now_ms())))
        notifier.start()
        assert notifier.ready.wait(5)

        def wait_for(count):
            deadline = time.monotonic() + 5
            while len(batches) < count and time.monotonic() < deadline:
                time.sleep(0.0005)
            assert len(batches) >= count

        try:
            for step in range(1, 2401):  # 240 s of virtual time in 100 ms steps
                t = step * 100
                tree.set_value("hv/ch0/vmon", float(step), t)
                tree.set_value("hv/ch0/status", step, t)
                clock.advance(100)
                wait_for(t // 1500 + t // 120_000)
        finally:
            notifier.stop()
        fast_times = [t for g, t in batches if g == "fast"]
        slow_times = [t for g, t in batches if g == "slow"]
        assert len(fast_times) == 160 and len(slow_times) == 2
        gaps = [b - a for a, b in zip(fast_times, fast_times[1:])]
        assert all(abs(gap - 1500) <= 150 for gap in gaps), gaps[:10]
        assert all(abs(gap - 120_000) <= 12_000
                   for gap in (b - a for a, b in zip(slow_times, slow_times[1:])))
