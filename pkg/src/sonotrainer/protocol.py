"""Binary frame framing and JSON control envelopes for the wire.

One duplex connection carries both: binary messages are video frames,
text messages are JSON control requests and their replies. A frame is

    magic 0x55 0x46 ("UF") | version u8 = 1 | stream_id u8 |
    timestamp_us u64 | width u16 | height u16 | pixel_format u8 |
    payload length u32 | payload bytes

in network byte order. Control requests carry a client correlation id:
{"id": n, "type": "...", ...}; every request gets exactly one reply
{"re": n, "ok": true|false, ...}.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

import numpy as np

from .errors import ProtocolError
from .frames import ImageFrame, PixelFormat, StreamId

MAGIC = b"UF"
VERSION = 1
HEADER = struct.Struct("!2sBBQHHBI")
HEADER_SIZE = HEADER.size
CONTROL_TYPES = ("set_weights", "start_record", "stop_record", "freeze",
                 "unfreeze", "select_reference", "get_metrics", "get_status")


def encode_frame(frame: ImageFrame) -> bytes:
    payload = frame.payload
    header = HEADER.pack(MAGIC, VERSION, int(frame.stream_id), frame.timestamp_us,
                         frame.width, frame.height, int(frame.pixel_format),
                         len(payload))
    return header + payload


def decode_frame(data: bytes) -> ImageFrame:
    if len(data) < HEADER_SIZE:
        raise ProtocolError(f"frame message too short ({len(data)} bytes)")
    magic, version, stream_id, ts, width, height, fmt, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        stream = StreamId(stream_id)
        pixel_format = PixelFormat(fmt)
    except ValueError as e:
        raise ProtocolError(str(e)) from e
    payload = data[HEADER_SIZE:]
    if len(payload) != length:
        raise ProtocolError(f"declared payload {length} bytes, got {len(payload)}")
    expected = width * height * pixel_format.channels
    if length != expected:
        raise ProtocolError(f"payload {length} bytes does not cover "
                            f"{width}x{height} {pixel_format.name}")
    return ImageFrame.from_payload(stream, ts, width, height, pixel_format, payload)


def control_request(msg_id: int, msg_type: str, **payload) -> str:
    return json.dumps({"id": msg_id, "type": msg_type, **payload})


def reply_ok(msg_id: Optional[int], **payload) -> str:
    return json.dumps({"re": msg_id, "ok": True, **payload})


def reply_error(msg_id: Optional[int], error: str, message: str) -> str:
    return json.dumps({"re": msg_id, "ok": False, "error": error,
                       "message": message})


def event(event_type: str, **payload) -> str:
    """Server-initiated JSON message (metrics, status); carries no 're'."""
    return json.dumps({"type": event_type, **payload})


def parse_control(text: str) -> dict:
    """Parse an incoming control request; the caller answers bad ones."""
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"control message is not JSON: {e}") from e
    if not isinstance(msg, dict):
        raise ProtocolError("control message must be a JSON object")
    if "type" not in msg:
        raise ProtocolError("control message lacks a 'type'")
    return msg
