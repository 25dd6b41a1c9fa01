"""Wire format: header bytes pinned by hand, round-trips, and the
malformed inputs a hostile or buggy peer could send."""

import json
import struct

import numpy as np
import pytest

from sonotrainer.errors import ProtocolError
from sonotrainer.frames import ImageFrame, PixelFormat, StreamId
from sonotrainer.protocol import (
    CONTROL_TYPES,
    HEADER_SIZE,
    control_request,
    decode_frame,
    encode_frame,
    event,
    parse_control,
    reply_error,
    reply_ok,
)


def gray_frame(ts=0, w=2, h=2, sid=StreamId.US):
    px = np.arange(w * h, dtype=np.uint8).reshape(h, w)
    return ImageFrame(sid, ts, px, PixelFormat.GRAY8)


def test_header_bytes_by_hand():
    f = gray_frame(ts=0x0102030405060708, w=2, h=3)
    data = encode_frame(f)
    want = (b"UF"                     # magic
            + b"\x01"                 # version
            + b"\x01"                 # stream US
            + b"\x01\x02\x03\x04\x05\x06\x07\x08"  # timestamp, big endian
            + b"\x00\x02"             # width
            + b"\x00\x03"             # height
            + b"\x00"                 # GRAY8
            + b"\x00\x00\x00\x06")    # 6 payload bytes
    assert data[:HEADER_SIZE] == want
    assert data[HEADER_SIZE:] == bytes(range(6))


def test_header_size_is_21():
    assert HEADER_SIZE == 21


def test_gray_roundtrip():
    f = gray_frame(ts=123456789, w=7, h=5)
    back = decode_frame(encode_frame(f))
    assert back.stream_id is StreamId.US
    assert back.timestamp_us == 123456789
    assert back.pixel_format is PixelFormat.GRAY8
    assert np.array_equal(back.pixels, f.pixels)


def test_rgb_roundtrip():
    rng = np.random.default_rng(61)
    px = rng.integers(0, 256, (4, 6, 3), dtype=np.uint8)
    f = ImageFrame(StreamId.COMPOSITE, 55, px, PixelFormat.RGB8)
    back = decode_frame(encode_frame(f))
    assert back.stream_id is StreamId.COMPOSITE
    assert np.array_equal(back.pixels, px)


def test_all_stream_ids_roundtrip():
    for sid in StreamId:
        f = gray_frame(sid=sid)
        assert decode_frame(encode_frame(f)).stream_id is sid


def test_noncontiguous_pixels_still_encode():
    big = np.arange(100, dtype=np.uint8).reshape(10, 10)
    f = ImageFrame(StreamId.US, 0, big[::2, ::2], PixelFormat.GRAY8)
    back = decode_frame(encode_frame(f))
    assert np.array_equal(back.pixels, big[::2, ::2])


def test_decode_rejects_short_message():
    with pytest.raises(ProtocolError):
        decode_frame(b"UF\x01")


def test_decode_rejects_bad_magic():
    data = bytearray(encode_frame(gray_frame()))
    data[0] = ord("X")
    with pytest.raises(ProtocolError, match="magic"):
        decode_frame(bytes(data))


def test_decode_rejects_wrong_version():
    data = bytearray(encode_frame(gray_frame()))
    data[2] = 9
    with pytest.raises(ProtocolError, match="version"):
        decode_frame(bytes(data))


def test_decode_rejects_unknown_stream_and_format():
    data = bytearray(encode_frame(gray_frame()))
    data[3] = 200  # stream id out of range
    with pytest.raises(ProtocolError):
        decode_frame(bytes(data))
    data = bytearray(encode_frame(gray_frame()))
    data[16] = 77  # pixel format out of range
    with pytest.raises(ProtocolError):
        decode_frame(bytes(data))


def test_decode_rejects_truncated_payload():
    data = encode_frame(gray_frame(w=4, h=4))
    with pytest.raises(ProtocolError, match="payload"):
        decode_frame(data[:-3])


def test_decode_rejects_length_dims_mismatch():
    # forge a header claiming 3x3 but ship 4 payload bytes
    header = struct.pack("!2sBBQHHBI", b"UF", 1, 1, 0, 3, 3, 0, 4)
    with pytest.raises(ProtocolError, match="cover"):
        decode_frame(header + b"\x00" * 4)


# ---------------------------------------------------------------------------
# control envelopes
# ---------------------------------------------------------------------------

def test_control_request_shape():
    msg = json.loads(control_request(5, "set_weights", w_rgb=0.5))
    assert msg == {"id": 5, "type": "set_weights", "w_rgb": 0.5}


def test_reply_shapes():
    ok = json.loads(reply_ok(7, frames=3))
    assert ok == {"re": 7, "ok": True, "frames": 3}
    err = json.loads(reply_error(8, "ConfigInvalid", "bad weights"))
    assert err["re"] == 8 and err["ok"] is False
    assert err["error"] == "ConfigInvalid"


def test_event_has_no_correlation_id():
    msg = json.loads(event("metrics", msd=1.5))
    assert msg == {"type": "metrics", "msd": 1.5}
    assert "re" not in msg


def test_parse_control_accepts_valid():
    msg = parse_control('{"id": 1, "type": "freeze"}')
    assert msg["type"] == "freeze"


def test_parse_control_rejects_garbage():
    with pytest.raises(ProtocolError):
        parse_control("not json at all")
    with pytest.raises(ProtocolError):
        parse_control("[1, 2, 3]")
    with pytest.raises(ProtocolError):
        parse_control('{"id": 1}')


def test_known_control_types():
    assert set(CONTROL_TYPES) == {
        "set_weights", "start_record", "stop_record", "freeze", "unfreeze",
        "select_reference", "get_metrics", "get_status",
    }
