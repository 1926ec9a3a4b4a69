"""Independent implementation of the affordance-streaming wire format.

This module is deliberately written from the format description alone and
shares no code with any client implementation; the interop tests compare its
bytes against the golden fixture bit-for-bit.

Format summary (all integers big-endian):
    message  := length:u32 kind:u8 payload
                (length counts kind + payload, max 16 MiB)
    HELLO    (0x00): "CKAR" version:u8
    FRAME    (0x01): frame_id:u64 timestamp_us:u64 width:u16 height:u16
                     pixel_format:u8 eye:u8 pixels[w*h*3]
    RESULT   (0x02): frame_id:u64 inference_us:u32 count:u16, then per
                     instance class_id:u8 role:u8 confidence:u16(x1e-4)
                     ring_count:u8, per ring vertex_count:u16 (x:u16 y:u16)*
    ERROR    (0x03): code:u16 frame_id:u64 message:utf-8
"""

from __future__ import annotations

import math
import socket
import struct
from dataclasses import dataclass

MAGIC = b"CKAR"
VERSION = 1

HELLO, FRAME, RESULT, ERROR = 0x00, 0x01, 0x02, 0x03
MAX_BODY = 16 * 1024 * 1024
RGB8 = 0

ERR_MALFORMED = 400
ERR_UNSUPPORTED_FORMAT = 415
ERR_PLUGIN = 500


class AdapterProtocolError(Exception):
    pass


class AdapterTransportError(Exception):
    pass


@dataclass(frozen=True)
class DecodedFrame:
    frame_id: int
    timestamp_us: int
    width: int
    height: int
    eye: int
    pixels: bytes  # RGB8 row-major


@dataclass(frozen=True)
class OutInstance:
    """One instance ready for the wire: integer-pixel rings."""

    class_id: int
    role: int
    confidence: float
    rings: tuple[tuple[tuple[int, int], ...], ...]


def frame_bytes(kind: int, payload: bytes) -> bytes:
    body = len(payload) + 1
    if body > MAX_BODY:
        raise AdapterProtocolError("message exceeds 16 MiB cap")
    return struct.pack(">IB", body, kind) + payload


def hello_bytes() -> bytes:
    return frame_bytes(HELLO, MAGIC + bytes([VERSION]))


def check_hello(payload: bytes) -> None:
    if len(payload) != 5 or payload[:4] != MAGIC:
        raise AdapterProtocolError("bad HELLO magic")
    if payload[4] != VERSION:
        raise AdapterProtocolError(f"unsupported version {payload[4]}")


def error_bytes(code: int, frame_id: int, message: str) -> bytes:
    return frame_bytes(ERROR, struct.pack(">HQ", code, frame_id) + message.encode("utf-8"))


def decode_frame_payload(payload: bytes) -> DecodedFrame:
    if len(payload) < 22:
        raise AdapterProtocolError("FRAME header truncated")
    frame_id, ts, width, height, fmt, eye = struct.unpack(">QQHHBB", payload[:22])
    if fmt != RGB8:
        raise AdapterProtocolError(f"unknown pixel_format {fmt}")
    if len(payload) != 22 + width * height * 3:
        raise AdapterProtocolError("FRAME pixel buffer length mismatch")
    return DecodedFrame(frame_id, ts, width, height, eye, payload[22:])


def quantize_confidence(confidence: float) -> int:
    q = math.floor(confidence * 10000 + 0.5)
    if not 0 <= q <= 10000:
        raise AdapterProtocolError(f"confidence {confidence} outside [0, 1]")
    return q


def result_bytes(frame_id: int, inference_us: int, instances: list[OutInstance]) -> bytes:
    if len(instances) > 0xFFFF:
        raise AdapterProtocolError("too many instances for u16 count")
    out = bytearray(struct.pack(">QIH", frame_id, inference_us, len(instances)))
    for inst in instances:
        if len(inst.rings) > 0xFF:
            raise AdapterProtocolError("too many rings for u8 count")
        out += struct.pack(
            ">BBHB", inst.class_id, inst.role, quantize_confidence(inst.confidence),
            len(inst.rings),
        )
        for ring in inst.rings:
            if len(ring) > 0xFFFF:
                raise AdapterProtocolError("too many vertices for u16 count")
            out += struct.pack(">H", len(ring))
            for x, y in ring:
                if not (0 <= x <= 0xFFFF and 0 <= y <= 0xFFFF):
                    raise AdapterProtocolError(f"vertex ({x}, {y}) outside u16 range")
                out += struct.pack(">HH", x, y)
    return frame_bytes(RESULT, bytes(out))


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except (socket.timeout, TimeoutError) as exc:
            raise AdapterTransportError("read timed out") from exc
        except OSError as exc:
            raise AdapterTransportError(str(exc)) from exc
        if not chunk:
            raise AdapterTransportError("EOF mid-message")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    """One framed message off the socket: (kind, payload)."""
    (body,) = struct.unpack(">I", recv_exact(sock, 4))
    if body > MAX_BODY:
        raise AdapterProtocolError("declared length exceeds 16 MiB cap")
    if body < 1:
        raise AdapterProtocolError("declared length below 1")
    data = recv_exact(sock, body)
    return data[0], data[1:]


def send_bytes(sock: socket.socket, data: bytes) -> None:
    try:
        sock.sendall(data)
    except OSError as exc:
        raise AdapterTransportError(str(exc)) from exc
