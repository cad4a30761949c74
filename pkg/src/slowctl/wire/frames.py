"""Binary frame codec for the field-layer protocol.

Frame layout (little-endian), documented bit-exactly in docs/wire.md:

    offset 0  u32  magic 0x31434C53 (bytes "SLC1")
    offset 4  u8   version (1)
    offset 5  u8   frame type
    offset 6  u16  reserved (0)
    offset 8  u32  payload length (<= 1 MiB)
    offset 12 payload

Values travel with explicit kind tags; strings are u16-length-prefixed UTF-8.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from ..values import Kind, Quality, SlowControlError, Value

MAGIC = 0x31434C53  # b"SLC1"
VERSION = 1
MAX_PAYLOAD = 1 << 20
HEADER = struct.Struct("<IBBHI")


class FrameType(IntEnum):
    REGISTER = 1
    RESOLVE = 2
    SUBSCRIBE = 3
    UPDATE = 4
    COMMAND = 5
    COMMAND_ACK = 6
    HEARTBEAT = 7
    ERROR = 8


class CodecError(SlowControlError):
    pass


@dataclass(frozen=True, slots=True)
class Frame:
    type: FrameType
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise CodecError(f"payload {len(frame.payload)} exceeds {MAX_PAYLOAD}")
    return HEADER.pack(MAGIC, VERSION, int(frame.type), 0, len(frame.payload)) + frame.payload


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Decode one frame from the head of `data`; returns (frame, bytes used)."""
    if len(data) < HEADER.size:
        raise CodecError("short header")
    magic, version, ftype, _, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CodecError(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    if length > MAX_PAYLOAD:
        raise CodecError(f"payload length {length} exceeds cap")
    if len(data) < HEADER.size + length:
        raise CodecError("truncated payload")
    try:
        ft = FrameType(ftype)
    except ValueError:
        raise CodecError(f"unknown frame type {ftype}") from None
    end = HEADER.size + length
    return Frame(ft, bytes(data[HEADER.size:end])), end


# -- payload primitives -------------------------------------------------------

_KIND_TAGS = {Kind.FLOAT: 1, Kind.INT: 2, Kind.BOOL: 3, Kind.STRING: 4,
              Kind.FLOAT_ARRAY: 5, Kind.INT_ARRAY: 6, Kind.BOOL_ARRAY: 7,
              Kind.STRING_ARRAY: 8}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}
_QUALITY_TAGS = {Quality.VALID: 0, Quality.INVALID: 1, Quality.STALE: 2}
_TAG_QUALITY = {v: k for k, v in _QUALITY_TAGS.items()}

_F64 = struct.Struct("<d")
_I64 = struct.Struct("<q")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")


class Writer:
    __slots__ = ("parts",)

    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self.parts.append(bytes((v,)))
        return self

    def u16(self, v: int) -> "Writer":
        self.parts.append(_U16.pack(v))
        return self

    def u32(self, v: int) -> "Writer":
        self.parts.append(_U32.pack(v))
        return self

    def i64(self, v: int) -> "Writer":
        self.parts.append(_I64.pack(v))
        return self

    def f64(self, v: float) -> "Writer":
        self.parts.append(_F64.pack(v))
        return self

    def string(self, s: str) -> "Writer":
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CodecError("string too long")
        self.parts.append(_U16.pack(len(raw)) + raw)
        return self

    def value(self, kind: Kind, v: Value) -> "Writer":
        self.u8(_KIND_TAGS[kind])
        if kind.is_array:
            self.u32(len(v))
            for item in v:
                self._scalar(kind.element, item)
        else:
            self._scalar(kind, v)
        return self

    def _scalar(self, kind: Kind, v) -> None:
        if kind is Kind.FLOAT:
            self.f64(float(v))
        elif kind is Kind.INT:
            self.i64(int(v))
        elif kind is Kind.BOOL:
            self.u8(1 if v else 0)
        else:
            self.string(v)

    def quality(self, q: Quality) -> "Writer":
        return self.u8(_QUALITY_TAGS[q])

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CodecError("payload underrun")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self._take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def i64(self) -> int:
        return _I64.unpack(self._take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self._take(8))[0]

    def string(self) -> str:
        n = self.u16()
        return self._take(n).decode("utf-8")

    def value(self) -> tuple[Kind, Value]:
        tag = self.u8()
        kind = _TAG_KINDS.get(tag)
        if kind is None:
            raise CodecError(f"unknown kind tag {tag}")
        if kind.is_array:
            n = self.u32()
            return kind, [self._scalar(kind.element) for _ in range(n)]
        return kind, self._scalar(kind)

    def _scalar(self, kind: Kind):
        if kind is Kind.FLOAT:
            return self.f64()
        if kind is Kind.INT:
            return self.i64()
        if kind is Kind.BOOL:
            return bool(self.u8())
        return self.string()

    def quality(self) -> Quality:
        tag = self.u8()
        if tag not in _TAG_QUALITY:
            raise CodecError(f"unknown quality tag {tag}")
        return _TAG_QUALITY[tag]

    def done(self) -> bool:
        return self.pos >= len(self.data)


# -- message payloads ---------------------------------------------------------

class Status(IntEnum):
    OK = 0
    COLLISION = 1
    NOT_FOUND = 2
    BAD_REQUEST = 3
    REJECTED_READONLY = 4
    TIMEOUT = 5
    ERROR = 6
    UNKNOWN_ITEM = 7


MODE_RW = 1
MODE_RO = 2
SUB_ON_CHANGE = 1
SUB_INTERVAL = 2


def pack_register(service: str, mode: int, host: str, port: int,
                  items: list[tuple[str, Kind]]) -> bytes:
    w = Writer().string(service).u8(mode).string(host).u16(port).u32(len(items))
    for name, kind in items:
        w.string(name).u8(_KIND_TAGS[kind])
    return w.bytes()


def unpack_register(payload: bytes):
    r = Reader(payload)
    service, mode, host, port = r.string(), r.u8(), r.string(), r.u16()
    items = [(r.string(), _TAG_KINDS[r.u8()]) for _ in range(r.u32())]
    return service, mode, host, port, items


def pack_status(status: Status, message: str = "") -> bytes:
    return Writer().u8(int(status)).string(message).bytes()


def unpack_status(payload: bytes) -> tuple[Status, str]:
    r = Reader(payload)
    return Status(r.u8()), r.string()


def pack_resolve_request(name: str) -> bytes:
    return Writer().string(name).bytes()


def unpack_resolve_request(payload: bytes) -> str:
    return Reader(payload).string()


def pack_resolve_reply(status: Status, service: str = "", host: str = "", port: int = 0,
                       mode: int = MODE_RW, items: list[tuple[str, Kind]] | None = None) -> bytes:
    w = Writer().u8(int(status)).string(service).string(host).u16(port).u8(mode)
    items = items or []
    w.u32(len(items))
    for name, kind in items:
        w.string(name).u8(_KIND_TAGS[kind])
    return w.bytes()


def unpack_resolve_reply(payload: bytes):
    r = Reader(payload)
    status = Status(r.u8())
    service, host, port, mode = r.string(), r.string(), r.u16(), r.u8()
    items = [(r.string(), _TAG_KINDS[r.u8()]) for _ in range(r.u32())]
    return status, service, host, port, mode, items


def pack_subscribe(mode: int, period_ms: int, items: list[str]) -> bytes:
    w = Writer().u8(mode).u32(period_ms).u32(len(items))
    for item in items:
        w.string(item)
    return w.bytes()


def unpack_subscribe(payload: bytes):
    r = Reader(payload)
    mode, period = r.u8(), r.u32()
    items = [r.string() for _ in range(r.u32())]
    return mode, period, items


def pack_subscribe_reply(errors: list[tuple[str, str]]) -> bytes:
    w = Writer().u8(int(Status.OK)).u32(len(errors))
    for item, error in errors:
        w.string(item).string(error)
    return w.bytes()


def unpack_subscribe_reply(payload: bytes) -> list[tuple[str, str]]:
    r = Reader(payload)
    r.u8()
    return [(r.string(), r.string()) for _ in range(r.u32())]


def pack_updates(updates) -> bytes:
    w = Writer().u32(len(updates))
    for u in updates:
        w.string(u.path).value(u.kind, u.value).i64(u.timestamp).quality(u.quality)
    return w.bytes()


def unpack_updates(payload: bytes):
    from ..values import Update
    r = Reader(payload)
    out = []
    for _ in range(r.u32()):
        path = r.string()
        kind, value = r.value()
        ts = r.i64()
        quality = r.quality()
        out.append(Update(path, kind, value, ts, quality))
    return out


def pack_command(cmd_id: int, item: str, kind: Kind, value: Value) -> bytes:
    return Writer().u32(cmd_id).string(item).value(kind, value).bytes()


def unpack_command(payload: bytes):
    r = Reader(payload)
    cmd_id = r.u32()
    item = r.string()
    kind, value = r.value()
    return cmd_id, item, kind, value


def pack_command_ack(cmd_id: int, status: Status, message: str = "") -> bytes:
    return Writer().u32(cmd_id).u8(int(status)).string(message).bytes()


def unpack_command_ack(payload: bytes):
    r = Reader(payload)
    return r.u32(), Status(r.u8()), r.string()


def pack_heartbeat(ts_ms: int) -> bytes:
    return Writer().i64(ts_ms).bytes()


def unpack_heartbeat(payload: bytes) -> int:
    return Reader(payload).i64()


def pack_error(message: str) -> bytes:
    return Writer().string(message).bytes()


def unpack_error(payload: bytes) -> str:
    return Reader(payload).string()
