"""Framed binary protocol spoken between producers, monitors, and the hub.

Every message is a frame: ``[u32 length LE][u8 msg_type][payload]`` where
length counts the type byte plus the payload. Control payloads (HELLO,
STREAM_DECL, SUBSCRIBE, ERR) are UTF-8 JSON; the hot path (SAMPLE_CHUNK)
and the sync path (PING/PONG/MARKER) are fixed binary layouts, all
little-endian, floats IEEE-754.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

from .streams import MarkerOrigin, Sample

MSG_HELLO = 0x01
MSG_STREAM_DECL = 0x02
MSG_SAMPLE_CHUNK = 0x03
MSG_MARKER = 0x04
MSG_PING = 0x05
MSG_PONG = 0x06
MSG_SUBSCRIBE = 0x07
MSG_BYE = 0x08
MSG_ACK = 0x09
MSG_ERR = 0x0A

VALID_TYPES = frozenset({
    MSG_HELLO, MSG_STREAM_DECL, MSG_SAMPLE_CHUNK, MSG_MARKER, MSG_PING,
    MSG_PONG, MSG_SUBSCRIBE, MSG_BYE, MSG_ACK, MSG_ERR,
})

_HEADER = struct.Struct("<IB")
_MAX_PAYLOAD = 2**32 - 2  # length field holds payload size + 1

DEFAULT_PORT = 16571


class ProtocolError(Exception):
    """Malformed frame or payload; carries a short error code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if msg_type not in VALID_TYPES:
        raise ProtocolError("bad-type", f"unknown message type 0x{msg_type:02X}")
    if len(payload) > _MAX_PAYLOAD:
        raise ProtocolError("oversize", "payload exceeds frame capacity")
    return _HEADER.pack(len(payload) + 1, msg_type) + payload


def decode_frame(buf: bytes) -> tuple[int, bytes, int] | None:
    """Decode one frame from the head of ``buf``.

    Returns ``(msg_type, payload, bytes_consumed)``, or None when the
    buffer does not yet hold a complete frame. Never reads past the
    declared frame length.
    """
    if len(buf) < 4:
        return None
    (length,) = struct.unpack_from("<I", buf)
    if length == 0:
        raise ProtocolError("bad-length", "frame length 0")
    if len(buf) < 4 + length:
        return None
    msg_type = buf[4]
    if msg_type not in VALID_TYPES:
        raise ProtocolError("bad-type", f"unknown message type 0x{msg_type:02X}")
    payload = bytes(buf[5:4 + length])
    return msg_type, payload, 4 + length


class FrameDecoder:
    """Incremental decoder for one connection's byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        """Append ``data`` and return every complete message now available."""
        self._buf.extend(data)
        out = []
        while True:
            decoded = decode_frame(self._buf)
            if decoded is None:
                return out
            msg_type, payload, used = decoded
            del self._buf[:used]
            out.append((msg_type, payload))

    @property
    def pending(self) -> int:
        return len(self._buf)


# --- sample chunks ------------------------------------------------------

_CHUNK_HEAD = struct.Struct("<II")


def encode_sample_chunk(stream_id: int, samples: Sequence[Sample],
                        channel_count: int) -> bytes:
    """Pack samples as ``[u32 stream_id][u32 count]`` then per sample
    ``[f64 raw_timestamp][channel_count x f32]``."""
    parts = [_CHUNK_HEAD.pack(stream_id, len(samples))]
    sample_fmt = struct.Struct(f"<d{channel_count}f")
    prev_t = float("-inf")
    for s in samples:
        if len(s.values) != channel_count:
            raise ProtocolError(
                "ragged-chunk",
                f"sample has {len(s.values)} values, expected {channel_count}",
            )
        if s.raw_timestamp < prev_t:
            raise ProtocolError("unordered-chunk", "timestamps must be non-decreasing")
        prev_t = s.raw_timestamp
        parts.append(sample_fmt.pack(s.raw_timestamp, *s.values))
    return b"".join(parts)


def decode_sample_chunk(payload: bytes, channel_count: int
                        ) -> tuple[int, list[Sample]]:
    if len(payload) < _CHUNK_HEAD.size:
        raise ProtocolError("short-chunk", "chunk header truncated")
    stream_id, count = _CHUNK_HEAD.unpack_from(payload)
    sample_fmt = struct.Struct(f"<d{channel_count}f")
    expected = _CHUNK_HEAD.size + count * sample_fmt.size
    if len(payload) != expected:
        raise ProtocolError(
            "short-chunk",
            f"chunk payload is {len(payload)} bytes, expected {expected}",
        )
    samples = []
    off = _CHUNK_HEAD.size
    for _ in range(count):
        fields = sample_fmt.unpack_from(payload, off)
        samples.append(Sample(raw_timestamp=fields[0], values=tuple(fields[1:])))
        off += sample_fmt.size
    return stream_id, samples


def peek_chunk_stream_id(payload: bytes) -> int:
    if len(payload) < 4:
        raise ProtocolError("short-chunk", "chunk header truncated")
    return struct.unpack_from("<I", payload)[0]


def chunk_sample_count(payload: bytes) -> int:
    if len(payload) < _CHUNK_HEAD.size:
        raise ProtocolError("short-chunk", "chunk header truncated")
    return _CHUNK_HEAD.unpack_from(payload)[1]


# --- markers ------------------------------------------------------------

_MARKER_HEAD = struct.Struct("<dBH")


def encode_marker(raw_timestamp: float, label: str, origin: MarkerOrigin,
                  source_ref: int | None = None) -> bytes:
    """``[f64 raw_t][u8 origin][u16 label_len][label]`` with an optional
    trailing ``[u32 source_ref]`` (hub-assigned, absent producer-side)."""
    encoded = label.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ProtocolError("oversize", "marker label too long")
    out = _MARKER_HEAD.pack(raw_timestamp, origin.value, len(encoded)) + encoded
    if source_ref is not None:
        out += struct.pack("<I", source_ref)
    return out


def decode_marker(payload: bytes) -> tuple[float, str, MarkerOrigin, int | None]:
    if len(payload) < _MARKER_HEAD.size:
        raise ProtocolError("short-marker", "marker payload truncated")
    raw_t, origin, label_len = _MARKER_HEAD.unpack_from(payload)
    end = _MARKER_HEAD.size + label_len
    if len(payload) < end:
        raise ProtocolError("short-marker", "marker label truncated")
    label = payload[_MARKER_HEAD.size:end].decode("utf-8")
    source_ref = None
    if len(payload) >= end + 4:
        (source_ref,) = struct.unpack_from("<I", payload, end)
    return raw_t, label, MarkerOrigin(origin), source_ref


# --- sync ---------------------------------------------------------------

def encode_ping(t0: float) -> bytes:
    return struct.pack("<d", t0)


def decode_ping(payload: bytes) -> float:
    if len(payload) != 8:
        raise ProtocolError("bad-ping", "ping payload must be 8 bytes")
    return struct.unpack("<d", payload)[0]


def encode_pong(t0: float, t1: float, t2: float) -> bytes:
    return struct.pack("<ddd", t0, t1, t2)


def decode_pong(payload: bytes) -> tuple[float, float, float]:
    if len(payload) != 24:
        raise ProtocolError("bad-pong", "pong payload must be 24 bytes")
    return struct.unpack("<ddd", payload)


# --- JSON control payloads ----------------------------------------------

def encode_json(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def decode_json(payload: bytes) -> dict:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("bad-json", str(exc)) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("bad-json", "payload must be a JSON object")
    return obj


def encode_err(code: str, detail: str = "") -> bytes:
    return encode_json({"code": code, "detail": detail})


def encode_ack(stream_id: int) -> bytes:
    return struct.pack("<I", stream_id)


def decode_ack(payload: bytes) -> int:
    if len(payload) != 4:
        raise ProtocolError("bad-ack", "ack payload must be 4 bytes")
    return struct.unpack("<I", payload)[0]
