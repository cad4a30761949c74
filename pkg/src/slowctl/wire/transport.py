"""Socket plumbing: length-prefixed frame I/O over TCP."""
from __future__ import annotations

import socket
import struct
import threading
from dataclasses import dataclass

from .frames import HEADER, MAGIC, MAX_PAYLOAD, VERSION, CodecError, Frame, FrameType


class _Eof:
    """Sentinel: the peer closed the connection (distinct from a timeout)."""

    def __repr__(self):
        return "EOF"


EOF = _Eof()


@dataclass(frozen=True, slots=True)
class UnknownFrame:
    """A structurally sound frame with an unrecognized type: the peer gets an
    ERROR reply, never a disconnect."""
    type_raw: int


class FrameConnection:
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self._send_lock = threading.Lock()
        self._recv_buf = b""

    def send(self, frame: Frame) -> None:
        data = HEADER.pack(MAGIC, VERSION, int(frame.type), 0, len(frame.payload)) + frame.payload
        with self._send_lock:
            self.sock.sendall(data)

    def _read_exact(self, n: int) -> bytes | None:
        while len(self._recv_buf) < n:
            try:
                chunk = self.sock.recv(65536)
            except (ConnectionError, OSError):
                return None
            if not chunk:
                return None
            self._recv_buf += chunk
        out, self._recv_buf = self._recv_buf[:n], self._recv_buf[n:]
        return out

    def recv(self, timeout: float | None = None):
        """One frame; None on timeout, the EOF sentinel when the peer closed.
        Raises CodecError on corrupt framing."""
        self.sock.settimeout(timeout)
        try:
            head = self._read_exact(HEADER.size)
        except socket.timeout:
            return None
        if head is None:
            return EOF
        magic, version, ftype, _, length = HEADER.unpack(head)
        if magic != MAGIC or version != VERSION:
            raise CodecError("corrupt frame header")
        if length > MAX_PAYLOAD:
            raise CodecError(f"payload length {length} exceeds cap")
        try:
            payload = self._read_exact(length)
        except socket.timeout:
            return None
        if payload is None:
            return EOF
        try:
            return Frame(FrameType(ftype), payload)
        except ValueError:
            return UnknownFrame(ftype)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect(host: str, port: int, timeout: float = 2.0) -> FrameConnection:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return FrameConnection(sock)


def parse_addr(text: str, default_port: int) -> tuple[str, int]:
    host, _, port = text.partition(":")
    return host or "127.0.0.1", int(port) if port else default_port
