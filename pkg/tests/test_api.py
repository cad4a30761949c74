import json
import time

import pytest
import requests

from slowctl.fleet import build_recipe_configs
from slowctl.supervisor.api import ROUTES, OperatorApi
from slowctl.supervisor.auth import SESSION_TIMEOUT_MS

from .test_supervisor import World


@pytest.fixture
def world(tmp_path):
    w = World(tmp_path)
    w.run(2)
    api = OperatorApi(w.sup, port=0)
    host, port = api.start()
    w.base = f"http://{host}:{port}"
    yield w
    api.stop()
    w.sup.stop()


def login(world, user, password):
    r = requests.post(f"{world.base}/api/login",
                      json={"user": user, "password": password}, timeout=5)
    assert r.status_code == 200, r.text
    return r.json()["token"]


def hdr(token):
    return {"Authorization": f"Bearer {token}"}


class TestAuthFlow:
    def test_login_logout(self, world):
        token = login(world, "shift", "shift")
        r = requests.get(f"{world.base}/api/summary", headers=hdr(token), timeout=5)
        assert r.status_code == 200
        requests.post(f"{world.base}/api/logout", headers=hdr(token), timeout=5)
        r = requests.get(f"{world.base}/api/summary", headers=hdr(token), timeout=5)
        assert r.status_code == 401

    def test_bad_credentials(self, world):
        r = requests.post(f"{world.base}/api/login",
                          json={"user": "shift", "password": "nope"}, timeout=5)
        assert r.status_code == 401

    def test_health_is_open_and_responsive(self, world):
        r = requests.get(f"{world.base}/api/health", timeout=5)
        assert r.status_code == 200
        body = r.json()
        assert body["leaves"] > 0 and "monitors" in body

    def test_expired_session_distinct_code(self, world):
        token = login(world, "guest", "guest")
        world.clock.advance(SESSION_TIMEOUT_MS + 1)
        r = requests.get(f"{world.base}/api/summary", headers=hdr(token), timeout=5)
        assert r.status_code == 401
        assert r.json()["error"]["code"] == "AUTH_EXPIRED"

    def test_error_shape_on_unknown_route(self, world):
        r = requests.get(f"{world.base}/api/nope", timeout=5)
        assert r.status_code == 404
        assert set(r.json()["error"]) == {"code", "message", "path"}


SAMPLE_URLS = {
    "ack": "/api/alerts/1/ack",
    "hv_command": "/api/hv/command",
    "recipe_save": "/api/recipes",
    "recipe_commit": "/api/recipes/x/commit",
    "snapshot_take": "/api/snapshots",
    "snapshot_apply": "/api/snapshots/x/apply",
    "hvref_load": "/api/hvref/x/load",
    "interlock_arm": "/api/interlocks/x/arm",
    "interlock_test": "/api/interlocks/test",
    "calo_reference": "/api/calo/ecal2/reference",
}


class TestAuthorizationCompleteness:
    def test_every_mutating_route_declares_an_action(self):
        exempt = {r.handler for r in ROUTES if r.auth_exempt}
        assert exempt == {"login", "logout", "health"}
        for route in ROUTES:
            if route.mutating and not route.auth_exempt:
                assert route.action is not None, route.handler

    def test_guest_denied_on_every_mutating_endpoint(self, world):
        token = login(world, "guest", "guest")
        for route in ROUTES:
            if not route.mutating or route.auth_exempt:
                continue
            url = SAMPLE_URLS[route.handler]
            r = requests.post(f"{world.base}{url}", headers=hdr(token), json={}, timeout=5)
            assert r.status_code == 403, (route.handler, r.status_code, r.text)
            assert r.json()["error"]["code"] == "PERMISSION_DENIED"

    def test_expert_scope_enforced_via_api(self, world):
        token = login(world, "ecal2_expert", "expert")
        r = requests.post(f"{world.base}/api/recipes", headers=hdr(token), timeout=5,
                          json={"name": "x", "items": {
                              "ecal1/hv/ch000/vmon": {"ok": [0, 1], "warn": [-1, 2]}}})
        assert r.status_code == 403  # ecal1 is not theirs


class TestReadEndpoints:
    def test_tree_browse(self, world):
        token = login(world, "guest", "guest")
        r = requests.get(f"{world.base}/api/tree", headers=hdr(token), timeout=5)
        names = {c["path"] for c in r.json()["children"]}
        assert "caen" in names and "beam" in names
        r = requests.get(f"{world.base}/api/tree?path=caen/crate00/ch000",
                         headers=hdr(token), timeout=5)
        leaves = {c["path"]: c for c in r.json()["children"]}
        assert leaves["caen/crate00/ch000/vmon"]["leaf"]

    def test_values_by_alias(self, world):
        token = login(world, "guest", "guest")
        r = requests.get(f"{world.base}/api/values?paths=ecal1/hv/ch000/vmon,ghost",
                         headers=hdr(token), timeout=5)
        values = r.json()["values"]
        assert values[0]["path"] == "caen/crate00/ch000/vmon"
        assert values[1]["error"] == "unknown path"

    def test_trend_and_csv_export_agree(self, world):
        world.run(10)
        token = login(world, "guest", "guest")
        t1 = world.clock.now_ms() + 1
        url = (f"/api/export.csv?paths=gas/plc00/flow/actual&t0=0&t1={t1}")
        r = requests.get(world.base + url, headers=hdr(token), timeout=5)
        assert r.status_code == 200
        expected = world.sup.trend_csv(["gas/plc00/flow/actual"], 0, t1)
        assert r.text == expected
        assert r.text.startswith("path,timestamp_iso8601,value,quality")


class TestOperations:
    def test_shift_ack_via_api(self, world):
        configs = build_recipe_configs(
            {"gas/plc00/flow/actual": {"ok": (-1, 0), "warn": (-2, 1), "ack": True}})
        world.sup.alarms.replace_configs(
            configs, lambda p: (99.0, world.clock.now_ms(), __import__(
                "slowctl.values", fromlist=["Quality"]).Quality.VALID))
        [record] = world.sup.alarms.active_alerts()
        token = login(world, "shift", "shift")
        r = requests.post(f"{world.base}/api/alerts/{record.record_id}/ack",
                          headers=hdr(token), timeout=5)
        assert r.status_code == 200
        assert r.json()["record"]["acknowledged_by"] == "shift"
        # second ack from another session: conflict names the winner
        token2 = login(world, "dcs", "dcs")
        r = requests.post(f"{world.base}/api/alerts/{record.record_id}/ack",
                          headers=hdr(token2), timeout=5)
        assert r.status_code == 409
        assert r.json()["error"]["acknowledged_by"] == "shift"

    def test_hv_command_round_trip(self, world):
        token = login(world, "shift", "shift")
        r = requests.post(f"{world.base}/api/hv/command", headers=hdr(token), timeout=5,
                          json={"target": "ecal1/hv/ch000", "item": "power", "value": True})
        assert r.status_code == 200 and r.json()["ok"]
        assert world.fleet.device("caen/crate00").channels["ch000"].power

    def test_recipe_save_and_commit_via_api(self, world):
        token = login(world, "dcs", "dcs")
        items = {"gas/plc00/flow/actual": {"ok": [-2.0, -1.0], "warn": [-3.0, 0.0]}}
        r = requests.post(f"{world.base}/api/recipes", headers=hdr(token),
                          json={"name": "via_api", "items": items}, timeout=5)
        assert r.status_code == 200 and r.json() == {"name": "via_api", "version": 1}
        r = requests.post(f"{world.base}/api/recipes/via_api/commit",
                          headers=hdr(token), json={}, timeout=5)
        assert r.status_code == 200 and r.json()["applied"] == 1
        # the live flow value (~10) is now out of band: alert is visible
        r = requests.get(f"{world.base}/api/alerts?scope=active",
                         headers=hdr(token), timeout=5)
        assert any(a["path"] == "gas/plc00/flow/actual" for a in r.json()["alerts"])

    def test_interlock_list_and_arm(self, world):
        token = login(world, "dcs", "dcs")
        r = requests.get(f"{world.base}/api/interlocks", headers=hdr(token), timeout=5)
        rules = {x["id"]: x for x in r.json()["rules"]}
        assert "magnet_sm2" in rules and rules["magnet_sm2"]["armed"]
        r = requests.post(f"{world.base}/api/interlocks/magnet_sm2/disarm",
                          headers=hdr(token), timeout=5)
        assert r.status_code == 200
        assert not world.sup.interlocks.rule("magnet_sm2").armed


class TestStream:
    def test_sse_hello_then_alert(self, world):
        token = login(world, "guest", "guest")
        resp = requests.get(f"{world.base}/api/stream?token={token}",
                            stream=True, timeout=10)
        lines = resp.iter_lines(chunk_size=1)
        first = next(lines)
        assert first == b"event: hello"
        # raise an alert and expect it on the stream
        configs = build_recipe_configs(
            {"gas/plc00/flow/actual": {"ok": (-1, 0), "warn": (-2, 1)}})
        world.sup.alarms.set_config("gas/plc00/flow/actual",
                                    configs["gas/plc00/flow/actual"])
        world.sup.alarms.evaluate("gas/plc00/flow/actual", 50.0, world.clock.now_ms())
        deadline = time.monotonic() + 8
        saw_alert = False
        for line in lines:
            if line.startswith(b"event: alert"):
                saw_alert = True
            if saw_alert and line.startswith(b"data:"):
                payload = json.loads(line.removeprefix(b"data: "))
                assert payload["event"] == "CAME"
                break
            if time.monotonic() > deadline:
                pytest.fail("no alert event on the stream")
        resp.close()
        assert saw_alert
