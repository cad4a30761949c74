"""Subscriber and command client.

subscribe() resolves each item through the registry, opens one connection per
serving service and merges all update streams into one queue. Every session
starts with a snapshot of current values; with auto_reconnect a dropped
service is re-resolved and re-subscribed (a fresh session, snapshot first).
"""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field

from ..clock import SystemClock
from ..values import Kind, Quality, SlowControlError, Update
from . import frames
from .frames import Frame, FrameType, Status
from .registry import RegistryClient
from .transport import EOF, FrameConnection, UnknownFrame, connect

logger = logging.getLogger(__name__)

COMMAND_TIMEOUT_MS = 5_000


def kind_of_value(value) -> Kind:
    if isinstance(value, bool):
        return Kind.BOOL
    if isinstance(value, int):
        return Kind.INT
    if isinstance(value, float):
        return Kind.FLOAT
    if isinstance(value, str):
        return Kind.STRING
    if isinstance(value, list):
        if not value:
            return Kind.FLOAT_ARRAY
        elem = kind_of_value(value[0])
        return Kind(elem.value + "[]")
    raise SlowControlError(f"cannot infer wire kind for {type(value).__name__}")


class UpdateStream:
    """Merged update queue over any number of per-service sessions."""

    def __init__(self, clock=None, auto_reconnect: bool = False):
        self.clock = clock or SystemClock()
        self.auto_reconnect = auto_reconnect
        self.errors: list[tuple[str, str]] = []
        self.received = 0
        self._queue: "queue.Queue[Update]" = queue.Queue()
        self._closed = threading.Event()
        self._conns: list[FrameConnection] = []
        self._lock = threading.Lock()

    def get(self, timeout: float | None = None) -> Update | None:
        try:
            u = self._queue.get(timeout=timeout)
            self.received += 1
            return u
        except queue.Empty:
            return None

    def drain(self, max_wait: float = 0.0) -> list[Update]:
        out = []
        u = self.get(timeout=max_wait if max_wait > 0 else None) if max_wait > 0 else None
        if u is not None:
            out.append(u)
        while True:
            try:
                out.append(self._queue.get_nowait())
                self.received += 1
            except queue.Empty:
                return out

    def close(self) -> None:
        self._closed.set()
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    # -- session plumbing --------------------------------------------------

    def _attach(self, registry: RegistryClient, service_name: str, host: str, port: int,
                items: list[str], mode: int, period_ms: int) -> None:
        conn = connect(host, port)
        conn.send(Frame(FrameType.SUBSCRIBE, frames.pack_subscribe(mode, period_ms, items)))
        reply = conn.recv(timeout=5.0)
        if not isinstance(reply, Frame) or reply.type is not FrameType.SUBSCRIBE:
            conn.close()
            raise SlowControlError(f"subscribe to {service_name} failed")
        for item, reason in frames.unpack_subscribe_reply(reply.payload):
            self.errors.append((item, reason))
        with self._lock:
            self._conns.append(conn)
        threading.Thread(target=self._reader, name=f"sub-{service_name}",
                         args=(registry, service_name, conn, items, mode, period_ms),
                         daemon=True).start()

    def _reader(self, registry, service_name, conn, items, mode, period_ms) -> None:
        while not self._closed.is_set():
            try:
                frame = conn.recv(timeout=2.0)
            except Exception:
                frame = EOF  # corrupt stream: treat as a drop
            if frame is None:
                continue  # quiet interval
            if frame is EOF:
                conn.close()
                with self._lock:
                    if conn in self._conns:
                        self._conns.remove(conn)
                if self.auto_reconnect and not self._closed.is_set():
                    self._reconnect(registry, service_name, items, mode, period_ms)
                return
            if isinstance(frame, UnknownFrame):
                continue
            if frame.type is FrameType.UPDATE:
                for u in frames.unpack_updates(frame.payload):
                    self._queue.put(u)
            # HEARTBEAT keepalives and anything else: connection is alive

    def _reconnect(self, registry, service_name, items, mode, period_ms) -> None:
        backoff = 0.2
        while not self._closed.is_set():
            try:
                info = registry.resolve(service_name)
                if info is not None:
                    self._attach(registry, info.service, info.host, info.port,
                                 items, mode, period_ms)
                    return
            except Exception:
                pass
            if self._closed.wait(backoff):
                return
            backoff = min(backoff * 2, 2.0)


def subscribe(registry_addr: tuple[str, int], items: list[str], mode: int = frames.SUB_ON_CHANGE,
              period_ms: int = 0, clock=None, auto_reconnect: bool = False) -> UpdateStream:
    """Open an update stream; unresolvable items land in stream.errors while
    the rest of the subscription proceeds."""
    clock = clock or SystemClock()
    registry = RegistryClient(registry_addr, clock)
    stream = UpdateStream(clock, auto_reconnect)
    by_service: dict[str, tuple] = {}
    known: list = []
    for item in items:
        info = next((k for k in known if item.startswith(k.service + "/")), None)
        if info is None:
            info = registry.resolve(item)
            if info is not None:
                known.append(info)
        if info is None:
            stream.errors.append((item, "unresolvable"))
            continue
        entry = by_service.setdefault(info.service, (info, []))
        entry[1].append(item)
    for info, service_items in by_service.values():
        try:
            stream._attach(registry, info.service, info.host, info.port,
                           service_items, mode, period_ms)
        except Exception as exc:
            for item in service_items:
                stream.errors.append((item, f"connect failed: {exc}"))
    return stream


@dataclass
class CommandResult:
    status: Status
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


def send_command(registry_addr: tuple[str, int], item: str, value,
                 kind: Kind | None = None, timeout_ms: int = COMMAND_TIMEOUT_MS,
                 clock=None) -> CommandResult:
    """Deliver one command and wait for the device-side ack. An endpoint that
    cannot be reached or does not answer within the timeout yields TIMEOUT."""
    clock = clock or SystemClock()
    registry = RegistryClient(registry_addr, clock)
    kind = kind or kind_of_value(value)
    deadline = clock.now_ms() + timeout_ms
    wall_budget = timeout_ms / 1000.0 / max(clock.speed, 1e-9)
    info = None
    try:
        info = registry.resolve(item)
    except Exception:
        pass
    if info is None:
        return CommandResult(Status.NOT_FOUND, f"no service for {item}")
    cmd_id = threading.get_ident() & 0xFFFF
    payload = frames.pack_command(cmd_id, item, kind, value)
    while True:
        remaining_wall = (deadline - clock.now_ms()) / 1000.0 / max(clock.speed, 1e-9)
        if remaining_wall <= 0:
            return CommandResult(Status.TIMEOUT, f"no ack from {info.service}")
        try:
            conn = connect(info.host, info.port, timeout=min(remaining_wall, wall_budget))
        except OSError:
            clock.sleep(200)  # endpoint dead or refusing: retry until the deadline
            continue
        try:
            conn.send(Frame(FrameType.COMMAND, payload))
            reply = conn.recv(timeout=max(remaining_wall, 0.01))
            if isinstance(reply, Frame) and reply.type is FrameType.COMMAND_ACK:
                rid, status, message = frames.unpack_command_ack(reply.payload)
                if rid == cmd_id:
                    return CommandResult(status, message)
            if reply is None:
                return CommandResult(Status.TIMEOUT, f"no ack from {info.service}")
        except Exception as exc:
            logger.debug("command attempt failed: %s", exc)
            clock.sleep(200)
        finally:
            conn.close()
