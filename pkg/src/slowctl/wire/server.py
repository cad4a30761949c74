"""Item server: one per device service. Publishes a fixed item list, serves
snapshot-first subscriptions (on-change or fixed-interval), executes commands
FIFO, and answers liveness heartbeats.

The `<service>/heartbeat` item is created automatically and carries the
timestamp of the last meaningful (real) value published by this server; it
never advances on its own.
"""
from __future__ import annotations

import logging
import queue
import socket
import threading
from dataclasses import dataclass, field

from ..clock import SystemClock
from ..values import Kind, Quality, SlowControlError, Update
from . import frames
from .frames import Frame, FrameType, Status
from .registry import RegistryClient
from .transport import EOF, FrameConnection, UnknownFrame

logger = logging.getLogger(__name__)

KEEPALIVE_MS = 60_000
MAX_BATCH_BYTES = 700_000
MAX_BATCH_COUNT = 500


class PublishError(SlowControlError):
    pass


def _entry_cost(u: Update) -> int:
    if isinstance(u.value, list):
        return len(u.path) + 24 + 10 * len(u.value)
    if isinstance(u.value, str):
        return len(u.path) + 24 + len(u.value)
    return len(u.path) + 32


def chunk_updates(updates: list[Update]) -> list[list[Update]]:
    chunks: list[list[Update]] = []
    batch: list[Update] = []
    size = 0
    for u in updates:
        cost = _entry_cost(u)
        if batch and (size + cost > MAX_BATCH_BYTES or len(batch) >= MAX_BATCH_COUNT):
            chunks.append(batch)
            batch, size = [], 0
        batch.append(u)
        size += cost
    if batch:
        chunks.append(batch)
    return chunks


@dataclass
class _Subscription:
    conn: FrameConnection
    mode: int
    period_ms: int
    items: set[str]
    queue: "queue.Queue[Update]" = field(default_factory=queue.Queue)
    closed: threading.Event = field(default_factory=threading.Event)


class ItemServer:
    def __init__(self, service: str, items: dict[str, Kind], clock=None,
                 registry: tuple[str, int] | None = None, mode: int = frames.MODE_RW,
                 command_handler=None, host: str = "127.0.0.1", advertise_host: str | None = None):
        self.service = service
        self.mode = mode
        self.clock = clock or SystemClock()
        self.host = host
        self.advertise_host = advertise_host or host
        self.registry = registry
        self.command_handler = command_handler
        self.heartbeat_item = f"{service}/heartbeat"
        self.kinds: dict[str, Kind] = dict(items)
        self.kinds[self.heartbeat_item] = Kind.INT
        self._table: dict[str, Update] = {}
        self._table_lock = threading.RLock()
        self._subs: list[_Subscription] = []
        self._cmd_queue: "queue.Queue[tuple[FrameConnection, int, str, Kind, object]]" = queue.Queue()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener: socket.socket | None = None
        self.port: int | None = None

    # -- lifecycle -----------------------------------------------------------

    def start(self, register: bool = True) -> tuple[str, int]:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, 0))
        self._listener.listen(64)
        self.port = self._listener.getsockname()[1]
        self._spawn(self._accept_loop, "accept")
        self._spawn(self._command_loop, "commands")
        if register and self.registry is not None:
            RegistryClient(self.registry, self.clock).register(
                self.service, self.mode, self.advertise_host, self.port,
                list(self.kinds.items()))
        return self.advertise_host, self.port

    def _spawn(self, target, name: str) -> None:
        t = threading.Thread(target=target, name=f"{self.service}-{name}", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        with self._table_lock:
            subs = list(self._subs)
        for sub in subs:
            sub.closed.set()
            sub.conn.close()
        for t in self._threads:
            t.join(timeout=3)

    # -- publishing ------------------------------------------------------------

    def publish(self, path: str, value, timestamp: int | None = None,
                quality: Quality = Quality.VALID) -> None:
        kind = self.kinds.get(path)
        if kind is None:
            raise PublishError(f"{self.service}: unknown item {path}")
        ts = timestamp if timestamp is not None else self.clock.now_ms()
        self.publish_batch([Update(path, kind, value, ts, quality)])

    def publish_batch(self, updates: list[Update]) -> None:
        with self._table_lock:
            hb_ts = None
            for u in updates:
                if u.path not in self.kinds:
                    raise PublishError(f"{self.service}: unknown item {u.path}")
                self._table[u.path] = u
                if u.path != self.heartbeat_item:
                    hb_ts = u.timestamp if hb_ts is None else max(hb_ts, u.timestamp)
            extended = updates
            if hb_ts is not None:
                old = self._table.get(self.heartbeat_item)
                new_hb = max(hb_ts, old.value if old else 0)
                hb = Update(self.heartbeat_item, Kind.INT, new_hb, hb_ts)
                self._table[hb.path] = hb
                extended = updates + [hb]
            for sub in self._subs:
                if sub.mode == frames.SUB_ON_CHANGE and not sub.closed.is_set():
                    for u in extended:
                        if u.path in sub.items:
                            sub.queue.put(u)

    def current(self, path: str) -> Update | None:
        with self._table_lock:
            return self._table.get(path)

    # -- connections -------------------------------------------------------------

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)  # poll so stop() can interrupt accept()
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve, args=(FrameConnection(sock),),
                             daemon=True).start()

    def _serve(self, conn: FrameConnection) -> None:
        sub: _Subscription | None = None
        try:
            while not self._stop.is_set():
                frame = conn.recv(timeout=1.0)
                if frame is EOF:
                    break
                if frame is None:
                    continue
                if isinstance(frame, UnknownFrame):
                    conn.send(Frame(FrameType.ERROR,
                                    frames.pack_error(f"unknown frame type {frame.type_raw}")))
                    continue
                if frame.type is FrameType.HEARTBEAT:
                    conn.send(Frame(FrameType.HEARTBEAT,
                                    frames.pack_heartbeat(self.clock.now_ms())))
                elif frame.type is FrameType.SUBSCRIBE:
                    sub = self._handle_subscribe(conn, frame.payload)
                elif frame.type is FrameType.COMMAND:
                    cmd_id, item, kind, value = frames.unpack_command(frame.payload)
                    self._cmd_queue.put((conn, cmd_id, item, kind, value))
                else:
                    conn.send(Frame(FrameType.ERROR,
                                    frames.pack_error(f"unexpected {frame.type.name}")))
        except Exception:
            pass
        finally:
            if sub is not None:
                sub.closed.set()
                with self._table_lock:
                    if sub in self._subs:
                        self._subs.remove(sub)
            conn.close()

    def _handle_subscribe(self, conn: FrameConnection, payload: bytes) -> _Subscription:
        mode, period_ms, items = frames.unpack_subscribe(payload)
        if mode == frames.SUB_INTERVAL:
            period_ms = max(period_ms, 1_000)  # fast cycles bottom out at 1 Hz
        known = [i for i in items if i in self.kinds]
        errors = [(i, "unknown item") for i in items if i not in self.kinds]
        sub = _Subscription(conn, mode, period_ms, set(known))
        conn.send(Frame(FrameType.SUBSCRIBE, frames.pack_subscribe_reply(errors)))
        with self._table_lock:
            snapshot = [self._table[i] for i in known if i in self._table]
            self._subs.append(sub)
        for chunk in chunk_updates(snapshot):
            conn.send(Frame(FrameType.UPDATE, frames.pack_updates(chunk)))
        if mode == frames.SUB_ON_CHANGE:
            threading.Thread(target=self._on_change_writer, args=(sub,), daemon=True).start()
        else:
            threading.Thread(target=self._interval_writer, args=(sub,), daemon=True).start()
        return sub

    def _on_change_writer(self, sub: _Subscription) -> None:
        keepalive_wall = KEEPALIVE_MS / 1000.0 / max(self.clock.speed, 1e-9)
        try:
            while not sub.closed.is_set() and not self._stop.is_set():
                try:
                    first = sub.queue.get(timeout=keepalive_wall)
                except queue.Empty:
                    sub.conn.send(Frame(FrameType.HEARTBEAT,
                                        frames.pack_heartbeat(self.clock.now_ms())))
                    continue
                batch = [first]
                while len(batch) < MAX_BATCH_COUNT:
                    try:
                        batch.append(sub.queue.get_nowait())
                    except queue.Empty:
                        break
                for chunk in chunk_updates(batch):
                    sub.conn.send(Frame(FrameType.UPDATE, frames.pack_updates(chunk)))
        except Exception:
            sub.closed.set()

    def _interval_writer(self, sub: _Subscription) -> None:
        next_t = self.clock.now_ms() + sub.period_ms
        try:
            while not sub.closed.is_set() and not self._stop.is_set():
                self.clock.sleep_until(next_t, sub.closed)
                if sub.closed.is_set() or self._stop.is_set():
                    return
                with self._table_lock:
                    snapshot = [self._table[i] for i in sub.items if i in self._table]
                for chunk in chunk_updates(snapshot):
                    sub.conn.send(Frame(FrameType.UPDATE, frames.pack_updates(chunk)))
                next_t += sub.period_ms
        except Exception:
            sub.closed.set()

    # -- commands ---------------------------------------------------------------------

    def _command_loop(self) -> None:
        """Single executor: commands are FIFO per server (hence per item)."""
        while not self._stop.is_set():
            try:
                conn, cmd_id, item, kind, value = self._cmd_queue.get(timeout=0.2)
            except queue.Empty:
                continue
            if self.mode == frames.MODE_RO:
                ack = frames.pack_command_ack(cmd_id, Status.REJECTED_READONLY,
                                              f"{self.service} publishes read-only parameters")
            elif self.command_handler is None:
                ack = frames.pack_command_ack(cmd_id, Status.UNKNOWN_ITEM,
                                              "service accepts no commands")
            else:
                try:
                    result = self.command_handler(item, value)
                    ack = frames.pack_command_ack(cmd_id, Status.OK, result or "OK")
                except Exception as exc:
                    ack = frames.pack_command_ack(cmd_id, Status.ERROR, str(exc))
            try:
                conn.send(Frame(FrameType.COMMAND_ACK, ack))
            except Exception:
                pass
