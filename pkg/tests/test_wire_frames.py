import random

import pytest

from slowctl.values import Kind, Quality, Update
from slowctl.wire import frames
from slowctl.wire.frames import (CodecError, Frame, FrameType, Status, decode_frame,
                                 encode_frame)


class TestFrameCodec:
    def test_round_trip_every_type(self):
        for ftype in FrameType:
            frame = Frame(ftype, bytes([1, 2, 3, int(ftype)]))
            decoded, used = decode_frame(encode_frame(frame))
            assert decoded == frame
            assert used == 12 + 4

    def test_empty_payload(self):
        frame = Frame(FrameType.HEARTBEAT)
        decoded, _ = decode_frame(encode_frame(frame))
        assert decoded == frame

    def test_payload_cap(self):
        with pytest.raises(CodecError):
            encode_frame(Frame(FrameType.UPDATE, b"x" * (frames.MAX_PAYLOAD + 1)))

    def test_bad_magic_rejected(self):
        data = bytearray(encode_frame(Frame(FrameType.ERROR, b"x")))
        data[0] ^= 0xFF
        with pytest.raises(CodecError):
            decode_frame(bytes(data))

    def test_truncated_payload_rejected(self):
        data = encode_frame(Frame(FrameType.UPDATE, b"abcdef"))
        with pytest.raises(CodecError):
            decode_frame(data[:-2])

    def test_unknown_type_rejected_by_strict_decode(self):
        data = bytearray(encode_frame(Frame(FrameType.ERROR, b"")))
        data[5] = 99
        with pytest.raises(CodecError):
            decode_frame(bytes(data))

    def test_fuzz_round_trip(self):
        rng = random.Random(1234)
        types = list(FrameType)
        for _ in range(20_000):
            frame = Frame(rng.choice(types), rng.randbytes(rng.randint(0, 200)))
            decoded, _ = decode_frame(encode_frame(frame))
            assert decoded == frame


ALL_KIND_VALUES = [
    (Kind.FLOAT, 3.25), (Kind.FLOAT, -1e300), (Kind.INT, -5), (Kind.INT, 2**62),
    (Kind.BOOL, True), (Kind.BOOL, False), (Kind.STRING, "hello/world"),
    (Kind.STRING, "unicode ✓"), (Kind.FLOAT_ARRAY, [1.5, -2.5, 0.0]),
    (Kind.INT_ARRAY, [1, 2, 3]), (Kind.BOOL_ARRAY, [True, False]),
    (Kind.STRING_ARRAY, ["a", "b,c"]), (Kind.FLOAT_ARRAY, []),
]


class TestPayloadCodecs:
    def test_updates_round_trip_all_kinds(self):
        updates = [Update(f"a/b{i}", kind, value, 1000 + i, Quality.VALID)
                   for i, (kind, value) in enumerate(ALL_KIND_VALUES)]
        updates.append(Update("bad/x", Kind.FLOAT, 1.0, 7, Quality.INVALID))
        updates.append(Update("stale/x", Kind.FLOAT, 2.0, 8, Quality.STALE))
        out = frames.unpack_updates(frames.pack_updates(updates))
        assert out == updates

    def test_register_round_trip(self):
        items = [("svc/a", Kind.FLOAT), ("svc/b", Kind.INT_ARRAY)]
        payload = frames.pack_register("svc", frames.MODE_RW, "10.0.0.1", 4242, items)
        assert frames.unpack_register(payload) == ("svc", frames.MODE_RW, "10.0.0.1", 4242, items)

    def test_resolve_round_trip(self):
        payload = frames.pack_resolve_reply(Status.OK, "svc", "h", 9, frames.MODE_RO,
                                            [("svc/x", Kind.BOOL)])
        status, service, host, port, mode, items = frames.unpack_resolve_reply(payload)
        assert (status, service, host, port, mode) == (Status.OK, "svc", "h", 9, frames.MODE_RO)
        assert items == [("svc/x", Kind.BOOL)]

    def test_subscribe_round_trip(self):
        payload = frames.pack_subscribe(frames.SUB_INTERVAL, 1500, ["a", "b"])
        assert frames.unpack_subscribe(payload) == (frames.SUB_INTERVAL, 1500, ["a", "b"])
        reply = frames.pack_subscribe_reply([("a", "unknown item")])
        assert frames.unpack_subscribe_reply(reply) == [("a", "unknown item")]

    def test_command_round_trip(self):
        payload = frames.pack_command(7, "hv/ch0/power", Kind.BOOL, True)
        assert frames.unpack_command(payload) == (7, "hv/ch0/power", Kind.BOOL, True)
        ack = frames.pack_command_ack(7, Status.REJECTED_READONLY, "ro")
        assert frames.unpack_command_ack(ack) == (7, Status.REJECTED_READONLY, "ro")

    def test_heartbeat_and_error(self):
        assert frames.unpack_heartbeat(frames.pack_heartbeat(123456789)) == 123456789
        assert frames.unpack_error(frames.pack_error("boom")) == "boom"

    def test_underrun_detected(self):
        payload = frames.pack_command(7, "x", Kind.FLOAT, 1.0)
        with pytest.raises(CodecError):
            frames.unpack_command(payload[:-3])
