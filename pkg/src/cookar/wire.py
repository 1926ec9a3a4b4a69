"""Binary wire format and stream transport between pipeline client and
segmentation backends.

Framing: every message is
    [length: u32 BE, counting kind + payload][kind: u8][payload]
with length capped at 16 MiB. All multi-byte integers are big-endian.

Message kinds and payload layouts:
    HELLO (0x00): magic "CKAR" + version byte (0x01)
    FRAME (0x01): frame_id u64, timestamp_us u64, width u16, height u16,
                  pixel_format u8 (0 = RGB8), eye u8, pixels w*h*3 bytes
    RESULT (0x02): frame_id u64, inference_us u32, instance_count u16,
                   then per instance: class_id u8 (0xFF = unknown), role u8,
                   confidence u16 (value / 10000), ring_count u8, then per
                   ring: vertex_count u16 and (x u16, y u16) vertex pairs
    ERROR (0x03): code u16, frame_id u64, utf-8 message (rest of payload)
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import round_half_up
from .types import AffordanceInstance, Eye, FrameEnvelope, Polygon, Role

MAGIC = b"CKAR"
VERSION = 1

KIND_HELLO = 0x00
KIND_FRAME = 0x01
KIND_RESULT = 0x02
KIND_ERROR = 0x03
_KNOWN_KINDS = (KIND_HELLO, KIND_FRAME, KIND_RESULT, KIND_ERROR)

MAX_MESSAGE_BYTES = 16 * 1024 * 1024  # length field cap, kind byte included

PIXEL_FORMAT_RGB8 = 0

CONFIDENCE_QUANTUM = 10000

# error codes carried in ERROR payloads
ERR_MALFORMED = 400
ERR_UNSUPPORTED_FORMAT = 415
ERR_PROVIDER = 500

HANDSHAKE_TIMEOUT_S = 5.0


class ProtocolError(Exception):
    """Peer violated the wire format (bad magic, bad length, bad field)."""


class TransportError(Exception):
    """The underlying byte stream failed (EOF mid-message, timeout)."""


@dataclass(frozen=True)
class WireMessage:
    kind: int
    payload: bytes


@dataclass(frozen=True)
class ErrorPayload:
    code: int
    frame_id: int
    message: str


@dataclass(frozen=True)
class ResultPayload:
    frame_id: int
    inference_us: int
    instances: tuple[AffordanceInstance, ...]


def frame_message(kind: int, payload: bytes) -> bytes:
    """Wrap kind + payload in the length-prefixed frame."""
    body_len = 1 + len(payload)
    if body_len > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"message of {body_len} bytes exceeds 16 MiB cap")
    return struct.pack(">IB", body_len, kind) + payload


def encode_hello() -> bytes:
    return frame_message(KIND_HELLO, MAGIC + bytes([VERSION]))


def decode_hello(payload: bytes) -> int:
    """Validate a HELLO payload, returning the peer's version."""
    if len(payload) != 5:
        raise ProtocolError(f"HELLO payload must be 5 bytes, got {len(payload)}")
    if payload[:4] != MAGIC:
        raise ProtocolError(f"bad HELLO magic {payload[:4]!r}")
    version = payload[4]
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    return version


def encode_frame(frame: FrameEnvelope) -> bytes:
    """FRAME message for one envelope. Depth maps never travel on the wire."""
    header = struct.pack(
        ">QQHHBB",
        frame.frame_id,
        frame.timestamp_us,
        frame.width,
        frame.height,
        PIXEL_FORMAT_RGB8,
        int(frame.eye),
    )
    return frame_message(KIND_FRAME, header + frame.pixels.tobytes())


def decode_frame(payload: bytes) -> FrameEnvelope:
    if len(payload) < 22:
        raise ProtocolError(f"FRAME payload truncated at {len(payload)} bytes (header is 22)")
    frame_id, timestamp_us, width, height, pixel_format, eye = struct.unpack(
        ">QQHHBB", payload[:22]
    )
    if pixel_format != PIXEL_FORMAT_RGB8:
        raise ProtocolError(f"unknown pixel_format {pixel_format}")
    expected = 22 + width * height * 3
    if len(payload) != expected:
        raise ProtocolError(
            f"FRAME pixels: payload is {len(payload)} bytes, expected {expected}"
        )
    try:
        eye_val = Eye(eye)
    except ValueError as exc:
        raise ProtocolError(f"unknown eye value {eye}") from exc
    pixels = np.frombuffer(payload[22:], dtype=np.uint8).reshape(height, width, 3)
    return FrameEnvelope(
        frame_id=frame_id,
        timestamp_us=timestamp_us,
        eye=eye_val,
        width=width,
        height=height,
        pixels=pixels,
    )


def encode_result(result: ResultPayload) -> bytes:
    if len(result.instances) > 0xFFFF:
        raise ProtocolError(f"{len(result.instances)} instances exceed u16 count")
    parts = [struct.pack(">QIH", result.frame_id, result.inference_us, len(result.instances))]
    for inst in result.instances:
        conf = round_half_up(inst.confidence * CONFIDENCE_QUANTUM)
        if len(inst.shape.rings) > 0xFF:
            raise ProtocolError("more than 255 rings in one instance")
        parts.append(
            struct.pack(">BBHB", inst.class_id, int(inst.role), conf, len(inst.shape.rings))
        )
        for ring in inst.shape.rings:
            if len(ring) > 0xFFFF:
                raise ProtocolError("more than 65535 vertices in one ring")
            parts.append(struct.pack(">H", len(ring)))
            coords = []
            for x, y in ring:
                xi, yi = round_half_up(x), round_half_up(y)
                if not (0 <= xi <= 0xFFFF and 0 <= yi <= 0xFFFF):
                    raise ProtocolError(f"vertex ({x}, {y}) outside u16 wire range")
                coords.append(struct.pack(">HH", xi, yi))
            parts.append(b"".join(coords))
    return frame_message(KIND_RESULT, b"".join(parts))


class _Cursor:
    def __init__(self, payload: bytes, what: str):
        self.buf = payload
        self.pos = 0
        self.what = what

    def take(self, n: int, fieldname: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ProtocolError(f"{self.what} truncated reading {fieldname}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise ProtocolError(f"{self.what} has {len(self.buf) - self.pos} trailing bytes")


def decode_result(payload: bytes) -> ResultPayload:
    cur = _Cursor(payload, "RESULT")
    frame_id, inference_us, count = struct.unpack(">QIH", cur.take(14, "header"))
    instances = []
    for _ in range(count):
        class_id, role, conf_q, ring_count = struct.unpack(
            ">BBHB", cur.take(5, "instance header")
        )
        if conf_q > CONFIDENCE_QUANTUM:
            raise ProtocolError(f"confidence quantum {conf_q} above 10000")
        try:
            role_val = Role(role)
        except ValueError as exc:
            raise ProtocolError(f"unknown role value {role}") from exc
        rings = []
        for _ in range(ring_count):
            (n_verts,) = struct.unpack(">H", cur.take(2, "vertex_count"))
            raw = cur.take(4 * n_verts, "vertices")
            ring = tuple(
                (float(x), float(y))
                for x, y in struct.iter_unpack(">HH", raw)
            )
            rings.append(ring)
        instances.append(
            AffordanceInstance(
                class_id=class_id,
                role=role_val,
                confidence=conf_q / CONFIDENCE_QUANTUM,
                shape=Polygon(tuple(rings)),
            )
        )
    cur.done()
    return ResultPayload(frame_id=frame_id, inference_us=inference_us, instances=tuple(instances))


def encode_error(code: int, frame_id: int = 0, message: str = "") -> bytes:
    return frame_message(KIND_ERROR, struct.pack(">HQ", code, frame_id) + message.encode("utf-8"))


def decode_error(payload: bytes) -> ErrorPayload:
    if len(payload) < 10:
        raise ProtocolError(f"ERROR payload truncated at {len(payload)} bytes")
    code, frame_id = struct.unpack(">HQ", payload[:10])
    return ErrorPayload(code=code, frame_id=frame_id, message=payload[10:].decode("utf-8"))


class StreamDecoder:
    """Incremental framing decoder: feed arbitrary byte chunks, get messages.

    Chunk boundaries never affect framing; the length prefix alone delimits
    messages. The 16 MiB cap is enforced before the body is buffered.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                return out
            (body_len,) = struct.unpack(">I", self._buf[:4])
            if body_len > MAX_MESSAGE_BYTES:
                raise ProtocolError(f"declared length {body_len} exceeds 16 MiB cap")
            if body_len < 1:
                raise ProtocolError("declared length smaller than the kind byte")
            if len(self._buf) < 4 + body_len:
                return out
            kind = self._buf[4]
            if kind not in _KNOWN_KINDS:
                raise ProtocolError(f"unknown message kind 0x{kind:02X}")
            payload = bytes(self._buf[5 : 4 + body_len])
            del self._buf[: 4 + body_len]
            out.append(WireMessage(kind=kind, payload=payload))

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        try:
            chunk = sock.recv(n - got)
        except (socket.timeout, TimeoutError) as exc:
            raise TransportError(f"timed out reading {n} bytes") from exc
        except OSError as exc:
            raise TransportError(f"stream failed: {exc}") from exc
        if not chunk:
            raise TransportError(f"EOF after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> WireMessage:
    """Block until one full message arrives. Enforces the length cap before
    the body is read, and raises TransportError on mid-message EOF."""
    (body_len,) = struct.unpack(">I", _recv_exact(sock, 4))
    if body_len > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"declared length {body_len} exceeds 16 MiB cap")
    if body_len < 1:
        raise ProtocolError("declared length smaller than the kind byte")
    body = _recv_exact(sock, body_len)
    kind = body[0]
    if kind not in _KNOWN_KINDS:
        raise ProtocolError(f"unknown message kind 0x{kind:02X}")
    return WireMessage(kind=kind, payload=body[1:])


def write_message(sock: socket.socket, data: bytes) -> None:
    try:
        sock.sendall(data)
    except OSError as exc:
        raise TransportError(f"stream failed: {exc}") from exc


def handshake(sock: socket.socket, side: str, timeout_s: float = HANDSHAKE_TIMEOUT_S) -> int:
    """Exchange HELLOs; both sides send first, then validate the peer's.

    Returns the negotiated version. Raises ProtocolError on bad magic or
    version, TransportError on timeout or EOF.
    """
    if side not in ("client", "server"):
        raise ValueError(f"side must be client or server, got {side!r}")
    previous = sock.gettimeout()
    sock.settimeout(timeout_s)
    try:
        write_message(sock, encode_hello())
        msg = read_message(sock)
        if msg.kind != KIND_HELLO:
            raise ProtocolError(f"expected HELLO, got kind 0x{msg.kind:02X}")
        return decode_hello(msg.payload)
    finally:
        sock.settimeout(previous)
