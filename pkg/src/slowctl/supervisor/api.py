"""Operator HTTP API with a server-push event stream (SSE), port 4080.

Every route is declared in ROUTES with its required authorization action;
mutating endpoints always consult the session policy before touching any
state. Bodies are JSON; errors are structured as
{"error": {"code", "message", "path"}}. Schema in docs/api.md.
"""
from __future__ import annotations

import json
import logging
import re
import threading
import queue as queue_mod
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable
from urllib.parse import parse_qs, urlparse

from ..alarms import AlreadyAcknowledged, RecordNotFound, SEVERITY_COLORS, Severity
from ..fleet import build_recipe_configs
from ..values import SlowControlError
from .auth import Action, AuthError, AuthExpired, PermissionDenied
from .core import Supervisor

logger = logging.getLogger(__name__)

DEFAULT_API_PORT = 4080
SSE_KEEPALIVE_S = 15.0


class ApiError(SlowControlError):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


@dataclass(frozen=True)
class Route:
    method: str
    pattern: re.Pattern
    handler: str
    action: Action | None     # None only for auth-exempt routes
    mutating: bool = False
    auth_exempt: bool = False


def _route(method, path_re, handler, action, mutating=False, auth_exempt=False):
    return Route(method, re.compile("^" + path_re + "$"), handler, action,
                 mutating, auth_exempt)


ROUTES: tuple[Route, ...] = (
    _route("POST", r"/api/login", "login", None, mutating=True, auth_exempt=True),
    _route("POST", r"/api/logout", "logout", None, mutating=True, auth_exempt=True),
    _route("GET", r"/api/health", "health", None, auth_exempt=True),
    _route("GET", r"/api/tree", "tree", Action.VIEW),
    _route("GET", r"/api/aliases", "aliases", Action.VIEW),
    _route("GET", r"/api/values", "values", Action.VIEW),
    _route("GET", r"/api/summary", "summary", Action.VIEW),
    _route("GET", r"/api/alerts", "alerts", Action.VIEW),
    _route("POST", r"/api/alerts/(?P<record_id>\d+)/ack", "ack", Action.ACK, mutating=True),
    _route("GET", r"/api/trend", "trend", Action.VIEW),
    _route("GET", r"/api/export.csv", "export_csv", Action.VIEW),
    _route("GET", r"/api/stream", "stream", Action.VIEW),
    _route("POST", r"/api/hv/command", "hv_command", Action.HV_COMMAND, mutating=True),
    _route("GET", r"/api/recipes", "recipes_list", Action.VIEW),
    _route("POST", r"/api/recipes", "recipe_save", Action.SAVE_RECIPE, mutating=True),
    _route("POST", r"/api/recipes/(?P<name>[^/]+)/commit", "recipe_commit",
           Action.COMMIT_RECIPE, mutating=True),
    _route("GET", r"/api/snapshots", "snapshots_list", Action.VIEW),
    _route("POST", r"/api/snapshots", "snapshot_take", Action.SAVE_SNAPSHOT, mutating=True),
    _route("GET", r"/api/snapshots/diff", "snapshot_diff", Action.VIEW),
    _route("POST", r"/api/snapshots/(?P<name>[^/]+)/apply", "snapshot_apply",
           Action.APPLY_SNAPSHOT, mutating=True),
    _route("GET", r"/api/hvref", "hvref_list", Action.VIEW),
    _route("POST", r"/api/hvref/(?P<name>[^/]+)/load", "hvref_load",
           Action.LOAD_HVREF, mutating=True),
    _route("GET", r"/api/interlocks", "interlocks_list", Action.VIEW),
    _route("POST", r"/api/interlocks/(?P<rule_id>[^/]+)/(?P<op>arm|disarm)",
           "interlock_arm", Action.INTERLOCK_CONTROL, mutating=True),
    _route("POST", r"/api/interlocks/test", "interlock_test",
           Action.INTERLOCK_CONTROL, mutating=True),
    _route("POST", r"/api/calo/(?P<calo>[^/]+)/reference", "calo_reference",
           Action.SAVE_RECIPE, mutating=True),
)


class OperatorApi:
    def __init__(self, supervisor: Supervisor, host: str = "127.0.0.1",
                 port: int = DEFAULT_API_PORT):
        self.supervisor = supervisor
        self.host = host
        self.port = port
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> tuple[str, int]:
        api = self

        class Handler(_ApiHandler):
            context = api

        self._server = ThreadingHTTPServer((self.host, self.port), Handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="operator-api", daemon=True)
        self._thread.start()
        logger.info("operator API on %s:%d", self.host, self.port)
        return self.host, self.port

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=3)


class _ApiHandler(BaseHTTPRequestHandler):
    context: OperatorApi = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("api: " + fmt, *args)

    # -- plumbing ------------------------------------------------------------

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        self.query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        for route in ROUTES:
            if route.method != method:
                continue
            m = route.pattern.match(parsed.path)
            if m is None:
                continue
            try:
                self._run_route(route, m.groupdict())
            except ApiError as exc:
                self._send_error(exc.status, exc.code, str(exc))
            except AlreadyAcknowledged as exc:
                self._send_json(409, {"error": {
                    "code": "ALREADY_ACKED", "message": str(exc), "path": parsed.path,
                    "acknowledged_by": exc.record.acknowledged_by}})
            except (RecordNotFound, SlowControlError) as exc:
                self._send_error(400, "BAD_REQUEST", str(exc))
            except Exception as exc:
                logger.exception("api failure on %s", parsed.path)
                self._send_error(500, "INTERNAL", str(exc))
            return
        self._send_error(404, "NOT_FOUND", f"no route for {method} {parsed.path}")

    def _run_route(self, route: Route, params: dict) -> None:
        sup = self.context.supervisor
        session = None
        if not route.auth_exempt:
            token = self._token()
            try:
                session = sup.sessions.get(token)
            except AuthExpired as exc:
                raise ApiError(401, "AUTH_EXPIRED", str(exc)) from exc
            except AuthError as exc:
                raise ApiError(401, "AUTH_REQUIRED", str(exc)) from exc
            if route.action is not None:
                try:
                    # role-level check first; handlers re-check with targets
                    sup.sessions.authorize(session, route.action)
                except PermissionDenied as exc:
                    raise ApiError(403, "PERMISSION_DENIED", str(exc)) from exc
        handler = getattr(self, "h_" + route.handler)
        handler(session, params, route)

    def _token(self) -> str | None:
        auth = self.headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            return auth.removeprefix("Bearer ").strip()
        return self.query.get("token")

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ApiError(400, "BAD_REQUEST", f"invalid JSON body: {exc}") from exc

    def _send_json(self, status: int, payload) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _send_error(self, status: int, code: str, message: str) -> None:
        try:
            self._send_json(status, {"error": {"code": code, "message": message,
                                               "path": urlparse(self.path).path}})
        except (BrokenPipeError, ConnectionError):
            pass

    def _scope_check(self, session, action: Action, targets: set[str]) -> None:
        try:
            self.context.supervisor.sessions.authorize(session, action, targets)
        except PermissionDenied as exc:
            raise ApiError(403, "PERMISSION_DENIED", str(exc)) from exc

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    # -- handlers --------------------------------------------------------------

    def h_login(self, session, params, route) -> None:
        body = self._body()
        sup = self.context.supervisor
        try:
            s = sup.sessions.login(body.get("user", ""), body.get("password", ""))
        except AuthError as exc:
            raise ApiError(401, "AUTH_REQUIRED", str(exc)) from exc
        self._send_json(200, {"token": s.token, "user": s.user.name, "role": s.role,
                              "detectors": sorted(s.user.detectors),
                              "control_room": s.user.control_room})

    def h_logout(self, session, params, route) -> None:
        self.context.supervisor.sessions.logout(self._token() or "")
        self._send_json(200, {"ok": True})

    def h_health(self, session, params, route) -> None:
        self._send_json(200, self.context.supervisor.health())

    def h_tree(self, session, params, route) -> None:
        path = self.query.get("path", "")
        try:
            self._send_json(200, {"path": path,
                                  "children": self.context.supervisor.browse(path)})
        except SlowControlError as exc:
            raise ApiError(404, "NOT_FOUND", str(exc)) from exc

    def h_aliases(self, session, params, route) -> None:
        prefix = self.query.get("prefix", "")
        table = self.context.supervisor.tree.aliases()
        if prefix:
            table = {a: p for a, p in table.items()
                     if a == prefix or a.startswith(prefix + "/")}
        self._send_json(200, {"aliases": table})

    def h_values(self, session, params, route) -> None:
        paths = [p for p in self.query.get("paths", "").split(",") if p]
        self._send_json(200, {"values": self.context.supervisor.values(paths)})

    def h_summary(self, session, params, route) -> None:
        self._send_json(200, {"summary": self.context.supervisor.summary(),
                              "colors": {s.name: c for s, c in SEVERITY_COLORS.items()}})

    def h_alerts(self, session, params, route) -> None:
        sup = self.context.supervisor
        scope = self.query.get("scope", "attention")
        if scope == "active":
            records = sup.alarms.active_alerts()
        else:
            records = sup.alarms.attention_list()
        self._send_json(200, {"alerts": [r.to_dict() for r in records]})

    def h_ack(self, session, params, route) -> None:
        record = self.context.supervisor.acknowledge(int(params["record_id"]),
                                                     session.user.name)
        self._send_json(200, {"record": record.to_dict()})

    def _trend_args(self) -> tuple[list[str], int, int, int | None]:
        try:
            paths = [p for p in self.query.get("paths", "").split(",") if p]
            t0 = int(self.query["t0"])
            t1 = int(self.query["t1"])
        except (KeyError, ValueError) as exc:
            raise ApiError(400, "BAD_REQUEST", f"need paths, t0, t1: {exc}") from exc
        max_points = int(self.query["max_points"]) if "max_points" in self.query else None
        return paths, t0, t1, max_points

    def h_trend(self, session, params, route) -> None:
        paths, t0, t1, max_points = self._trend_args()
        series = self.context.supervisor.trend(paths, t0, t1, max_points)
        self._send_json(200, {"series": [
            {"path": s.path, "unknown_path": s.unknown_path,
             "samples": [{"t": x.timestamp, "v": x.value, "q": x.quality.value}
                         for x in s.samples]} for s in series]})

    def h_export_csv(self, session, params, route) -> None:
        paths, t0, t1, max_points = self._trend_args()
        text = self.context.supervisor.trend_csv(paths, t0, t1, max_points)
        data = text.encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "text/csv")
        self.send_header("Content-Disposition", "attachment; filename=trend.csv")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def h_stream(self, session, params, route) -> None:
        sup = self.context.supervisor
        sid, q = sup.bus.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            hello = json.dumps({"type": "hello", "summary": sup.summary()})
            self.wfile.write(f"event: hello\ndata: {hello}\n\n".encode())
            self.wfile.flush()
            while True:
                try:
                    event = q.get(timeout=SSE_KEEPALIVE_S)
                except queue_mod.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                data = json.dumps(event)
                self.wfile.write(f"event: {event['type']}\ndata: {data}\n\n".encode())
                self.wfile.flush()
        except (BrokenPipeError, ConnectionError, OSError):
            pass
        finally:
            sup.bus.unsubscribe(sid)

    def h_hv_command(self, session, params, route) -> None:
        body = self._body()
        sup = self.context.supervisor
        target = body.get("target", "")
        item = body.get("item", "")
        if item not in ("power", "clear", "v0set", "i0max", "rup", "rdwn", "trip"):
            raise ApiError(400, "BAD_REQUEST", f"not an HV command item: {item!r}")
        hw = sup._resolve_or_none(target)
        if hw is None:
            raise ApiError(404, "NOT_FOUND", f"unknown channel {target!r}")
        self._scope_check(session, Action.HV_COMMAND, {sup._detector_of(hw)})
        ok, message = sup.hv_command(target, item, body.get("value"))
        self._send_json(200 if ok else 502, {"ok": ok, "message": message,
                                             "target": target, "item": item})

    def h_recipes_list(self, session, params, route) -> None:
        sup = self.context.supervisor
        listing = sup.configs.list_recipes()
        self._send_json(200, {"recipes": listing,
                              "active": getattr(sup, "_active_recipe", None)})

    def h_recipe_save(self, session, params, route) -> None:
        body = self._body()
        sup = self.context.supervisor
        name = body.get("name")
        items_spec = body.get("items") or {}
        if not name or not items_spec:
            raise ApiError(400, "BAD_REQUEST", "need name and items")
        configs = build_recipe_configs(items_spec)
        targets = {sup._detector_of(sup._resolve_or_none(a) or a) for a in configs}
        self._scope_check(session, Action.SAVE_RECIPE, targets)
        recipe = sup.save_recipe(name, configs, session.user.name)
        self._send_json(200, {"name": recipe.name, "version": recipe.version})

    def h_recipe_commit(self, session, params, route) -> None:
        body = self._body()
        sup = self.context.supervisor
        name = params["name"]
        recipe = sup.configs.load_recipe(name, body.get("version"))
        targets = {sup._detector_of(sup._resolve_or_none(a) or a) for a in recipe.items}
        self._scope_check(session, Action.COMMIT_RECIPE, targets)
        applied = sup.commit_recipe(name, body.get("version"), session.user.name)
        self._send_json(200, {"applied": applied})

    def h_snapshots_list(self, session, params, route) -> None:
        self._send_json(200, {"snapshots": self.context.supervisor.configs.list_snapshots()})

    def h_snapshot_take(self, session, params, route) -> None:
        body = self._body()
        name = body.get("name")
        if not name:
            raise ApiError(400, "BAD_REQUEST", "need name")
        snap = self.context.supervisor.take_snapshot(name, session.user.name)
        self._send_json(200, {"name": snap.name, "mappings": len(snap.pairs)})

    def h_snapshot_diff(self, session, params, route) -> None:
        a, b = self.query.get("a"), self.query.get("b")
        if not a or not b:
            raise ApiError(400, "BAD_REQUEST", "need a and b")
        diff = self.context.supervisor.configs.diff(a, b)
        self._send_json(200, {"moved": diff.moved, "added": diff.added,
                              "removed": diff.removed})

    def h_snapshot_apply(self, session, params, route) -> None:
        sup = self.context.supervisor
        snap = sup.configs.load_snapshot(params["name"])
        targets = {sup.manifest.detector_of(path, alias) for path, alias in snap.pairs}
        self._scope_check(session, Action.APPLY_SNAPSHOT, targets)
        applied = sup.apply_snapshot(params["name"], session.user.name)
        self._send_json(200, {"applied": applied})

    def h_hvref_list(self, session, params, route) -> None:
        self._send_json(200, {"files": self.context.supervisor.configs.list_hvref()})

    def h_hvref_load(self, session, params, route) -> None:
        body = self._body()
        sup = self.context.supervisor
        strict = bool(body.get("strict", True))
        lines, _ = sup.configs.load_hvref(params["name"], strict=strict)
        targets = {sup._detector_of(sup._resolve_or_none(ln.alias) or ln.alias)
                   for ln in lines}
        self._scope_check(session, Action.LOAD_HVREF, targets)
        report = sup.load_hvref(params["name"], session.user.name, strict=strict)
        self._send_json(200, {"report": report})

    def h_interlocks_list(self, session, params, route) -> None:
        self._send_json(200, {"rules": self.context.supervisor.interlocks.list_rules()})

    def h_interlock_arm(self, session, params, route) -> None:
        sup = self.context.supervisor
        sup.interlocks.arm(params["rule_id"], params["op"] == "arm")
        sup.audit_log.append({"type": "config_audit", "op": f"interlock_{params['op']}",
                              "name": params["rule_id"], "user": session.user.name,
                              "ts": sup.clock.now_ms()})
        self._send_json(200, {"rule": params["rule_id"], "armed": params["op"] == "arm"})

    def h_interlock_test(self, session, params, route) -> None:
        sup = self.context.supervisor
        events = sup.interlocks.recheck(sup.clock.now_ms(), dry_run=True)
        self._send_json(200, {"fired": [
            {"rule": e.rule_id, "trigger": e.trigger_path,
             "actions": [{"target": a.target, "status": a.status} for a in e.actions]}
            for e in events]})

    def h_calo_reference(self, session, params, route) -> None:
        sup = self.context.supervisor
        self._scope_check(session, Action.SAVE_RECIPE, {params["calo"]})
        body = self._body()
        reference = sup.set_calo_reference(params["calo"], body.get("amplitudes"))
        self._send_json(200, {"calo": params["calo"], "channels": len(reference)})
