"""The name registry: service records, liveness pinging and resolution.

One registry process per deployment (default port 4050, overridable via the
SLOWCTL_REGISTRY environment variable). Registry state is rebuilt from
re-registrations after a restart, so nothing is persisted.

A registration colliding with a *live* service is rejected; once the old
endpoint misses two liveness pings (5 s apart) it is deregistered and the
name is free again, which bounds failover at ~10 s.
"""
from __future__ import annotations

import logging
import socket
import threading
from dataclasses import dataclass, field

from ..clock import SystemClock
from ..values import Kind, SlowControlError
from . import frames
from .frames import Frame, FrameType, Status
from .transport import EOF, FrameConnection, UnknownFrame, connect

logger = logging.getLogger(__name__)

DEFAULT_REGISTRY_PORT = 4050
PING_INTERVAL_MS = 5_000
MISS_LIMIT = 2
PING_TIMEOUT_S = 1.0


class RegistryError(SlowControlError):
    pass


class CollisionError(RegistryError):
    pass


@dataclass
class ServiceRecord:
    service: str
    mode: int
    host: str
    port: int
    items: list[tuple[str, Kind]]
    registered_at: int
    misses: int = 0


@dataclass(frozen=True)
class ServiceInfo:
    service: str
    host: str
    port: int
    mode: int
    items: tuple[tuple[str, Kind], ...] = ()

    @property
    def read_only(self) -> bool:
        return self.mode == frames.MODE_RO


class Registry:
    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_REGISTRY_PORT,
                 clock=None, ping_interval_ms: int = PING_INTERVAL_MS,
                 miss_limit: int = MISS_LIMIT):
        self.host = host
        self.port = port
        self.clock = clock or SystemClock()
        self.ping_interval_ms = ping_interval_ms
        self.miss_limit = miss_limit
        self._records: dict[str, ServiceRecord] = {}
        self._item_index: dict[str, str] = {}
        self._lock = threading.RLock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener: socket.socket | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> tuple[str, int]:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, self.port))
        self._listener.listen(64)
        self.port = self._listener.getsockname()[1]
        for target, name in ((self._accept_loop, "registry-accept"),
                             (self._liveness_loop, "registry-liveness")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        logger.info("registry listening on %s:%d", self.host, self.port)
        return self.host, self.port

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        for t in self._threads:
            t.join(timeout=3)

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    def services(self) -> list[ServiceRecord]:
        with self._lock:
            return list(self._records.values())

    # -- connection handling ----------------------------------------------------

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)  # poll so stop() can interrupt accept()
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(FrameConnection(sock),),
                                 daemon=True)
            t.start()

    def _serve(self, conn: FrameConnection) -> None:
        try:
            while not self._stop.is_set():
                frame = conn.recv(timeout=1.0)
                if frame is EOF:
                    return
                if frame is None:
                    continue
                if isinstance(frame, UnknownFrame):
                    conn.send(Frame(FrameType.ERROR,
                                    frames.pack_error(f"unknown frame type {frame.type_raw}")))
                    continue
                if frame.type is FrameType.REGISTER:
                    conn.send(self._handle_register(frame.payload))
                elif frame.type is FrameType.RESOLVE:
                    conn.send(self._handle_resolve(frame.payload))
                elif frame.type is FrameType.HEARTBEAT:
                    conn.send(Frame(FrameType.HEARTBEAT,
                                    frames.pack_heartbeat(self.clock.now_ms())))
                else:
                    conn.send(Frame(FrameType.ERROR,
                                    frames.pack_error(f"unexpected {frame.type.name}")))
        except Exception:
            pass
        finally:
            conn.close()

    def _handle_register(self, payload: bytes) -> Frame:
        try:
            service, mode, host, port, items = frames.unpack_register(payload)
        except Exception as exc:
            return Frame(FrameType.REGISTER, frames.pack_status(Status.BAD_REQUEST, str(exc)))
        with self._lock:
            old = self._records.get(service)
        if old is not None and (old.host, old.port) != (host, port):
            if self._ping_endpoint(old.host, old.port):
                return Frame(FrameType.REGISTER,
                             frames.pack_status(Status.COLLISION,
                                                f"{service} is live at {old.host}:{old.port}"))
            with self._lock:
                old.misses += 1
                if old.misses < self.miss_limit:
                    return Frame(FrameType.REGISTER,
                                 frames.pack_status(Status.COLLISION,
                                                    f"{service} liveness not yet expired"))
                self._drop(service)
        record = ServiceRecord(service, mode, host, port, list(items), self.clock.now_ms())
        with self._lock:
            self._records[service] = record
            for name, _ in items:
                self._item_index[name] = service
        logger.info("registered %s at %s:%d (%d items)", service, host, port, len(items))
        return Frame(FrameType.REGISTER, frames.pack_status(Status.OK))

    def _handle_resolve(self, payload: bytes) -> Frame:
        name = frames.unpack_resolve_request(payload)
        with self._lock:
            record = self._records.get(name)
            if record is None:
                service = self._item_index.get(name)
                if service is None:
                    segments = name.split("/")
                    for cut in range(len(segments) - 1, 0, -1):
                        head = "/".join(segments[:cut])
                        if head in self._records:
                            service = head
                            break
                if service is not None:
                    record = self._records.get(service)
        if record is None:
            return Frame(FrameType.RESOLVE, frames.pack_resolve_reply(Status.NOT_FOUND))
        return Frame(FrameType.RESOLVE,
                     frames.pack_resolve_reply(Status.OK, record.service, record.host,
                                               record.port, record.mode, record.items))

    # -- liveness ----------------------------------------------------------------

    def _ping_endpoint(self, host: str, port: int) -> bool:
        try:
            conn = connect(host, port, timeout=PING_TIMEOUT_S / max(self.clock.speed, 1.0))
        except OSError:
            return False
        try:
            conn.send(Frame(FrameType.HEARTBEAT, frames.pack_heartbeat(self.clock.now_ms())))
            reply = conn.recv(timeout=PING_TIMEOUT_S / max(self.clock.speed, 1.0))
            return isinstance(reply, Frame) and reply.type is FrameType.HEARTBEAT
        except Exception:
            return False
        finally:
            conn.close()

    def _liveness_loop(self) -> None:
        while not self._stop.is_set():
            self.clock.sleep(self.ping_interval_ms, self._stop)
            if self._stop.is_set():
                return
            with self._lock:
                records = list(self._records.values())
            for record in records:
                alive = self._ping_endpoint(record.host, record.port)
                with self._lock:
                    if alive:
                        record.misses = 0
                    else:
                        record.misses += 1
                        if record.misses >= self.miss_limit:
                            logger.warning("service %s missed %d pings, deregistered",
                                           record.service, record.misses)
                            self._drop(record.service)

    def _drop(self, service: str) -> None:
        self._records.pop(service, None)
        self._item_index = {k: v for k, v in self._item_index.items() if v != service}


class RegistryClient:
    """Client-side access to the registry, with register retry/backoff."""

    def __init__(self, address: tuple[str, int], clock=None):
        self.address = address
        self.clock = clock or SystemClock()

    def _request(self, frame: Frame, timeout: float = 2.0) -> Frame:
        conn = connect(*self.address, timeout=timeout)
        try:
            conn.send(frame)
            reply = conn.recv(timeout=timeout)
            if not isinstance(reply, Frame):
                raise RegistryError("registry closed the connection")
            return reply
        finally:
            conn.close()

    def register(self, service: str, mode: int, host: str, port: int,
                 items: list[tuple[str, Kind]],
                 retry_timeout_ms: int = 30_000) -> None:
        """Register, retrying with backoff while the registry is unreachable
        or an apparently-dead holder of the name ages out. A collision with a
        live service raises CollisionError immediately."""
        payload = frames.pack_register(service, mode, host, port, items)
        deadline = self.clock.now_ms() + retry_timeout_ms
        backoff_ms = 500
        while True:
            reply = None
            try:
                reply = self._request(Frame(FrameType.REGISTER, payload))
            except (OSError, RegistryError):
                pass  # registry unreachable: queued behind backoff
            if reply is not None:
                status, message = frames.unpack_status(reply.payload)
                if status is Status.OK:
                    return
                if status is Status.COLLISION and "live at" in message:
                    raise CollisionError(message)
                if status is Status.BAD_REQUEST:
                    raise RegistryError(message)
                # collision pending liveness expiry: keep retrying
            if self.clock.now_ms() >= deadline:
                raise RegistryError(f"registration of {service} timed out")
            self.clock.sleep(backoff_ms)
            backoff_ms = min(backoff_ms * 2, 4_000)

    def resolve(self, name: str, timeout: float = 2.0) -> ServiceInfo | None:
        reply = self._request(Frame(FrameType.RESOLVE, frames.pack_resolve_request(name)),
                              timeout=timeout)
        status, service, host, port, mode, items = frames.unpack_resolve_reply(reply.payload)
        if status is not Status.OK:
            return None
        return ServiceInfo(service, host, port, mode, tuple(items))

    def ping(self) -> bool:
        try:
            reply = self._request(Frame(FrameType.HEARTBEAT, frames.pack_heartbeat(0)),
                                  timeout=1.0)
            return reply.type is FrameType.HEARTBEAT
        except Exception:
            return False
