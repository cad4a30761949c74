"""Operator command line.

Subcommands: registry, sim, supervisor, archive (query|export|snapshot|
replicate), recipe (list|save|commit), snapshot (take|diff|apply), hvref
(load|list), interlock (list|arm|disarm|test), demo, fleet (gen).

Every command is non-interactive and returns a nonzero exit code on failure.
Exit codes: 0 success, 1 operational failure, 2 usage error (argparse).
"""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time
from pathlib import Path

from . import __version__
from .clock import ScaledClock, SystemClock
from .values import SlowControlError

logger = logging.getLogger(__name__)


def _clock_from_args(args) -> SystemClock:
    speed = float(str(getattr(args, "speed", "1")).rstrip("x") or 1)
    anchor = getattr(args, "clock_anchor", None)
    if speed == 1.0 and anchor is None:
        return SystemClock()
    return ScaledClock(speed=speed, anchor_ms=anchor)


def _registry_addr(args) -> tuple[str, int]:
    from .wire import parse_addr, registry_from_env, DEFAULT_REGISTRY_PORT
    if getattr(args, "registry", None):
        return parse_addr(args.registry, DEFAULT_REGISTRY_PORT)
    return registry_from_env()


def _add_clock_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--speed", default="1", help="time factor, e.g. 10 or 10x")
    p.add_argument("--clock-anchor", type=int, default=None,
                   help="shared time-domain anchor (epoch ms)")


def _wait_forever(stoppers) -> None:
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)
    while not stop.is_set():
        stop.wait(0.5)
    for fn in stoppers:
        try:
            fn()
        except Exception:
            pass


# -- service commands ------------------------------------------------------


def cmd_registry(args) -> int:
    from .wire import Registry
    registry = Registry(host=args.host, port=args.port, clock=_clock_from_args(args))
    host, port = registry.start()
    print(f"registry listening on {host}:{port}", flush=True)
    _wait_forever([registry.stop])
    return 0


def cmd_sim(args) -> int:
    from .devices import DeviceFleet, FleetRunner, parse_faults
    from .devices.hv import CommandRejected
    from .fleet import Manifest
    from .wire import MODE_RO, MODE_RW, ItemServer

    clock = _clock_from_args(args)
    manifest = Manifest.parse_file(args.manifest)
    fleet = DeviceFleet(manifest, seed=args.seed)
    registry_addr = _registry_addr(args)
    servers = []
    for device in fleet.devices:
        def make_handler(dev):
            def handler(item, value):
                return dev.command(item, value)
            return handler

        server = ItemServer(device.service, dict(device.items()), clock=clock,
                            registry=registry_addr,
                            mode=MODE_RO if device.read_only else MODE_RW,
                            command_handler=make_handler(device))
        server.start()
        servers.append((device, server))
    print(f"simulating {len(servers)} services from {args.manifest}", flush=True)

    by_service = {d.service: srv for d, srv in servers}

    def publish(updates):
        per_service: dict[str, list] = {}
        for u in updates:
            svc = next((s for s in by_service if u.path.startswith(s + "/")), None)
            if svc is not None:
                per_service.setdefault(svc, []).append(u)
        for svc, batch in per_service.items():
            by_service[svc].publish_batch(batch)

    faults = parse_faults(Path(args.faults).read_text()) if args.faults else []
    duration_ms = round(args.duration * 1000) if args.duration else None
    runner = FleetRunner(fleet, clock, publish, faults=faults,
                         dt_ms=round(args.dt * 1000), duration_ms=duration_ms,
                         anchor_ms=args.clock_anchor)
    if duration_ms is not None:
        runner.run()
        for _, server in servers:
            server.stop()
        return 0
    runner.start()
    _wait_forever([runner.stop] + [srv.stop for _, srv in servers])
    return 0


def cmd_supervisor(args) -> int:
    from .fleet import Manifest
    from .supervisor import Supervisor
    from .supervisor.api import OperatorApi
    from .wire import send_command

    clock = _clock_from_args(args)
    manifest = Manifest.parse_file(args.manifest)
    rules_text = Path(args.rules).read_text() if args.rules else None
    registry_addr = _registry_addr(args)

    def sender(path, value):
        result = send_command(registry_addr, path, value, clock=clock)
        return result.ok, f"{result.status.name}: {result.message}"

    sup = Supervisor(manifest, args.config_dir, args.data_dir, clock=clock,
                     command_sender=sender, rules_text=rules_text,
                     gateways=tuple(args.gateways.split(",")) if args.gateways else ())
    sup.start_pump(workers=args.workers)
    sup.start_wire_ingest(registry_addr)
    sup.start_housekeeping()
    api = OperatorApi(sup, host=args.host, port=args.port)
    host, port = api.start()
    print(f"supervisor API on http://{host}:{port}", flush=True)
    _wait_forever([api.stop, sup.stop])
    return 0


# -- archive commands ----------------------------------------------------------


def cmd_archive(args) -> int:
    from .archive import ArchiveStore, Replica, TrendQuery, export_csv

    store = ArchiveStore(Path(args.data_dir) / "archive")
    if args.archive_cmd == "query":
        q = TrendQuery(args.paths.split(","), args.t0, args.t1, args.max_points)
        out = [{"path": s.path, "unknown_path": s.unknown_path,
                "samples": [{"t": x.timestamp, "v": x.value, "q": x.quality.value}
                            for x in s.samples]} for s in store.query(q)]
        print(json.dumps(out, indent=1))
    elif args.archive_cmd == "export":
        q = TrendQuery(args.paths.split(","), args.t0, args.t1, args.max_points)
        text = export_csv(store.query(q))
        if args.out:
            Path(args.out).write_text(text)
            print(f"wrote {args.out}")
        else:
            sys.stdout.write(text)
    elif args.archive_cmd == "snapshot":
        store.roll()
        n = store.snapshot_to(args.dest)
        print(f"copied {n} sealed segments to {args.dest}")
    elif args.archive_cmd == "replicate":
        store.roll()
        replica = Replica(args.dest)
        n = replica.sync_from(store)
        print(f"replicated {n} samples (checkpoint {replica.checkpoint})")
    return 0


# -- API-client commands ----------------------------------------------------------


def _api(args):
    from .scenario import _Api
    api = _Api(args.api)
    api.login(args.user, args.password)
    return api


def cmd_recipe(args) -> int:
    api = _api(args)
    if args.recipe_cmd == "list":
        print(json.dumps(api.call("GET", "/api/recipes"), indent=1))
    elif args.recipe_cmd == "save":
        items = json.loads(Path(args.items).read_text())
        reply = api.call("POST", "/api/recipes", {"name": args.name, "items": items})
        print(f"saved {reply['name']} v{reply['version']}")
    elif args.recipe_cmd == "commit":
        body = {"version": args.version} if args.version else {}
        reply = api.call("POST", f"/api/recipes/{args.name}/commit", body)
        print(f"applied {reply['applied']} alarm configs")
    return 0


def cmd_snapshot(args) -> int:
    api = _api(args)
    if args.snapshot_cmd == "take":
        reply = api.call("POST", "/api/snapshots", {"name": args.name})
        print(f"snapshot {reply['name']}: {reply['mappings']} mappings")
    elif args.snapshot_cmd == "diff":
        reply = api.call("GET", f"/api/snapshots/diff?a={args.a}&b={args.b}")
        print(json.dumps(reply, indent=1))
    elif args.snapshot_cmd == "apply":
        reply = api.call("POST", f"/api/snapshots/{args.name}/apply", {})
        print(f"applied {reply['applied']} mappings")
    return 0


def cmd_hvref(args) -> int:
    api = _api(args)
    if args.hvref_cmd == "list":
        print(json.dumps(api.call("GET", "/api/hvref"), indent=1))
    elif args.hvref_cmd == "load":
        reply = api.call("POST", f"/api/hvref/{args.name}/load",
                         {"strict": not args.no_strict})
        failures = [r for r in reply["report"] if r["status"] != "OK"]
        for r in reply["report"]:
            print(f"{r.get('target', '?')}: {r['status']}")
        return 1 if failures else 0
    return 0


def cmd_interlock(args) -> int:
    api = _api(args)
    if args.interlock_cmd == "list":
        print(json.dumps(api.call("GET", "/api/interlocks"), indent=1))
    elif args.interlock_cmd in ("arm", "disarm"):
        reply = api.call("POST", f"/api/interlocks/{args.rule}/{args.interlock_cmd}", {})
        print(f"{reply['rule']}: {'armed' if reply['armed'] else 'disarmed'}")
    elif args.interlock_cmd == "test":
        reply = api.call("POST", "/api/interlocks/test", {"dry_run": True})
        print(json.dumps(reply, indent=1))
    return 0


def cmd_demo(args) -> int:
    from .scenario import run_demo
    report = run_demo(args.scenario, log_dir=args.keep_logs)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_fleet(args) -> int:
    from .fleet import PROFILES
    bundle = PROFILES[args.profile]()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"fleet_{args.profile}.manifest").write_text(bundle.manifest_text)
    (out / "demo.rules").write_text(bundle.rules_text)
    (out / "users.txt").write_text(bundle.users_text)
    (out / "nominal_hv.ref").write_text(bundle.hvref_text)
    (out / f"recipe_{args.profile}.json").write_text(json.dumps(
        {alias: {"ok": list(spec["ok"]), "warn": list(spec["warn"]),
                 "ack": bool(spec.get("ack", False))}
         for alias, spec in bundle.recipe_items.items()}, indent=0))
    print(f"wrote fleet_{args.profile}.manifest, demo.rules, users.txt, "
          f"nominal_hv.ref, recipe_{args.profile}.json to {out}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowctl",
                                     description="detector slow-control stack")
    parser.add_argument("--version", action="version", version=f"slowctl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("registry", help="run the name registry")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=4050)
    _add_clock_args(p)
    p.set_defaults(fn=cmd_registry)

    p = sub.add_parser("sim", help="run the simulated device fleet")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--faults", help="fault-injection script file")
    p.add_argument("--duration", type=float, help="stop after this many sim seconds")
    p.add_argument("--dt", type=float, default=0.1, help="sim step (s)")
    p.add_argument("--registry", help="registry host:port (or SLOWCTL_REGISTRY)")
    _add_clock_args(p)
    p.set_defaults(fn=cmd_sim)

    p = sub.add_parser("supervisor", help="run the supervisory service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rules", help="interlock rules file")
    p.add_argument("--config-dir", required=True)
    p.add_argument("--data-dir", default="./slowctl-data")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=4080)
    p.add_argument("--registry")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--gateways", help="comma-separated gateway hosts to ping")
    _add_clock_args(p)
    p.set_defaults(fn=cmd_supervisor)

    p = sub.add_parser("archive", help="query and manage the historical store")
    asub = p.add_subparsers(dest="archive_cmd", required=True)
    for name in ("query", "export"):
        ap = asub.add_parser(name)
        ap.add_argument("--data-dir", required=True)
        ap.add_argument("--paths", required=True)
        ap.add_argument("--t0", type=int, required=True)
        ap.add_argument("--t1", type=int, required=True)
        ap.add_argument("--max-points", type=int)
        if name == "export":
            ap.add_argument("-o", "--out")
    ap = asub.add_parser("snapshot")
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--dest", required=True)
    ap = asub.add_parser("replicate")
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--dest", required=True)
    p.set_defaults(fn=cmd_archive)

    def api_args(ap):
        ap.add_argument("--api", default="http://127.0.0.1:4080")
        ap.add_argument("--user", default="shift")
        ap.add_argument("--password", default="shift")

    p = sub.add_parser("recipe", help="alarm-threshold recipes")
    rsub = p.add_subparsers(dest="recipe_cmd", required=True)
    ap = rsub.add_parser("list")
    api_args(ap)
    ap = rsub.add_parser("save")
    ap.add_argument("--name", required=True)
    ap.add_argument("--items", required=True, help="JSON file: alias -> {ok, warn, ack}")
    api_args(ap)
    ap = rsub.add_parser("commit")
    ap.add_argument("--name", required=True)
    ap.add_argument("--recipe-version", dest="version", type=int)
    api_args(ap)
    p.set_defaults(fn=cmd_recipe)

    p = sub.add_parser("snapshot", help="hardware/logical mapping snapshots")
    ssub = p.add_subparsers(dest="snapshot_cmd", required=True)
    ap = ssub.add_parser("take")
    ap.add_argument("--name", required=True)
    api_args(ap)
    ap = ssub.add_parser("diff")
    ap.add_argument("--a", required=True)
    ap.add_argument("--b", required=True)
    api_args(ap)
    ap = ssub.add_parser("apply")
    ap.add_argument("--name", required=True)
    api_args(ap)
    p.set_defaults(fn=cmd_snapshot)

    p = sub.add_parser("hvref", help="HV reference setting files")
    hsub = p.add_subparsers(dest="hvref_cmd", required=True)
    ap = hsub.add_parser("list")
    api_args(ap)
    ap = hsub.add_parser("load")
    ap.add_argument("--name", required=True)
    ap.add_argument("--no-strict", action="store_true",
                    help="skip malformed lines instead of aborting")
    api_args(ap)
    p.set_defaults(fn=cmd_hvref)

    p = sub.add_parser("interlock", help="software interlock rules")
    isub = p.add_subparsers(dest="interlock_cmd", required=True)
    for name in ("list", "test"):
        ap = isub.add_parser(name)
        if name == "test":
            ap.add_argument("--dry-run", action="store_true", default=True)
        api_args(ap)
    for name in ("arm", "disarm"):
        ap = isub.add_parser(name)
        ap.add_argument("rule")
        api_args(ap)
    p.set_defaults(fn=cmd_interlock)

    p = sub.add_parser("demo", help="run a scripted end-to-end scenario")
    p.add_argument("scenario")
    p.add_argument("--keep-logs", help="directory for process logs and data")
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("fleet", help="generate fleet configuration bundles")
    fsub = p.add_subparsers(dest="fleet_cmd", required=True)
    ap = fsub.add_parser("gen")
    ap.add_argument("--profile", choices=("mini", "demo"), default="mini")
    ap.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_fleet)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except SlowControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


def sim_main(argv: list[str] | None = None) -> int:
    """`slowctl-sim ...` is shorthand for `slowctl sim ...`."""
    return main(["sim"] + (argv if argv is not None else sys.argv[1:]))


if __name__ == "__main__":
    sys.exit(main())
