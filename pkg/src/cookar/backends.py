"""Interchangeable segmentation providers and the server shell that exposes
any of them over the wire protocol.

Providers implement ``segment(frame) -> list[AffordanceInstance]``:

* OracleProvider — deterministic synthetic scenes with known ground truth
  and controllable prediction error; the test substrate for metrics and
  the pipeline.
* ReplayProvider — returns stored human annotations, optionally sleeping a
  fixed duration to emulate model inference time.
* RemoteClient — speaks the wire protocol to any server built from this
  module (or any byte-compatible implementation).
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from . import wire
from .annotations import AnnotationSet
from .geometry import Affine, rasterize, round_half_up
from .rng import SeededStream
from .types import (
    AffordanceInstance,
    ClassTaxonomy,
    Eye,
    FrameEnvelope,
    Polygon,
    default_taxonomy,
)

log = logging.getLogger("cookar.backends")

DEFAULT_CONFIDENCE_THRESHOLD = 0.4
DEFAULT_PORT = 7465
DEFAULT_INFERENCE_US = 15_950  # emulated model latency when enabled
DEFAULT_RESULT_TIMEOUT_S = 1.0


class SegmentationProvider(Protocol):
    def segment(self, frame: FrameEnvelope) -> list[AffordanceInstance]: ...


class RemoteError(Exception):
    """Server answered with an ERROR message."""

    def __init__(self, code: int, frame_id: int, message: str):
        super().__init__(f"server error {code} (frame {frame_id}): {message}")
        self.code = code
        self.frame_id = frame_id
        self.message = message


class ResultTimeout(wire.TransportError):
    pass


# ---------------------------------------------------------------------------
# synthetic oracle scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a deterministic synthetic scene.

    ``translate_px`` and ``confidence_floor`` control the prediction jitter:
    zero translate and floor 1.0 make predictions equal ground truth.
    """

    seed: int
    tool_count: int = 3
    width: int = 320
    height: int = 240
    translate_px: int = 0
    confidence_floor: float = 1.0
    focal_px: float = 500.0
    baseline_m: float = 0.063
    depth_range_mm: tuple[int, int] = (600, 2000)

    def __post_init__(self):
        if not 1 <= self.tool_count <= 6:
            raise ValueError("tool_count must be in 1..6")
        if self.translate_px < 0:
            raise ValueError("translate_px must be >= 0")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError("confidence_floor must be in [0, 1]")


# local-frame part outlines per tool archetype: (functional part, handle part)
_TOOL_SHAPES: dict[str, tuple[tuple[int, list[tuple[float, float]]], ...]] = {
    "knife": (
        (0, [(14, -5), (46, -1), (46, 1), (14, 5)]),            # Knife Blade
        (1, [(-14, -3), (14, -3), (14, 5), (-14, 5)]),          # Knife Handle
    ),
    "spoon": (
        (2, [(24, -8), (32, -11), (40, -8), (43, 0), (40, 8), (32, 11), (24, 8), (21, 0)]),
        (3, [(-20, -2), (22, -2), (22, 2), (-20, 2)]),
    ),
    "fork": (
        (4, [(18, -6), (34, -7), (34, 7), (18, 6)]),
        (5, [(-18, -2), (18, -3), (18, 3), (-18, 2)]),
    ),
    "scissors": (
        (6, [(10, -3), (40, 0), (10, 3)]),
        (7, [(-16, -5), (10, -3), (10, 3), (-16, 5)]),
    ),
    "pan": (
        (12, [(14, 0), (10, 10), (0, 14), (-10, 10), (-14, 0), (-10, -10), (0, -14), (10, -10)]),
        (13, [(14, -2), (40, -2), (40, 2), (14, 2)]),
    ),
    "cup": (
        (14, [(9, 0), (6, 7), (-2, 9), (-8, 5), (-8, -5), (-2, -9), (6, -7)]),
        (15, [(9, -5), (15, -4), (15, 4), (9, 5)]),
    ),
}
_TOOL_ORDER = ("knife", "spoon", "fork", "scissors", "pan", "cup")

# fixed render palette per class id so scenes are identical everywhere
_PALETTE = {
    cid: (
        40 + (cid * 53) % 180,
        40 + (cid * 97) % 180,
        40 + (cid * 151) % 180,
    )
    for cid in range(18)
}


@dataclass(frozen=True)
class SceneTool:
    kind: str
    depth_mm: int
    parts: tuple[tuple[int, Polygon], ...]  # (class_id, posed shape)


@dataclass(frozen=True)
class OracleScene:
    spec: SceneSpec
    left: np.ndarray
    right: np.ndarray
    depth_mm: np.ndarray
    ground_truth: tuple[AffordanceInstance, ...]
    tools: tuple[SceneTool, ...]


def _pose_tool(kind: str, stream: SeededStream, spec: SceneSpec, placed_boxes: list) -> Optional[SceneTool]:
    """Sample one pose; parts are rounded to integer vertices so the wire
    round-trip is exact. Returns None when the sample does not fit."""
    max_disp = round_half_up(
        spec.focal_px * spec.baseline_m * 1000.0 / spec.depth_range_mm[0]
    )
    margin_l = max(4, max_disp + spec.translate_px + 1)
    margin = 4 + spec.translate_px
    scale = stream.uniform(0.8, 1.5)
    angle = stream.uniform(0.0, 360.0)
    cx = stream.uniform(margin_l + 50, spec.width - margin - 50)
    cy = stream.uniform(margin + 50, spec.height - margin - 50)
    depth = stream.randint(*spec.depth_range_mm)
    pose = Affine.translation(cx, cy).compose(
        Affine.rotation_about(angle, 0, 0).compose(Affine.scaling(scale, scale))
    )
    parts = []
    for class_id, pts in _TOOL_SHAPES[kind]:
        mapped = [pose.apply(x, y) for x, y in pts]
        ring = tuple((float(round_half_up(x)), float(round_half_up(y))) for x, y in mapped)
        parts.append((class_id, ring))
    xs = [x for _, ring in parts for x, _ in ring]
    ys = [y for _, ring in parts for _, y in ring]
    box = (min(xs), min(ys), max(xs), max(ys))
    if box[0] < margin_l or box[1] < margin or box[2] >= spec.width - margin or box[3] >= spec.height - margin:
        return None
    for other in placed_boxes:
        if box[0] <= other[2] and other[0] <= box[2] and box[1] <= other[3] and other[1] <= box[3]:
            return None
    placed_boxes.append(box)
    return SceneTool(
        kind=kind,
        depth_mm=depth,
        parts=tuple((cid, Polygon((ring,))) for cid, ring in parts),
    )


def oracle_scene(spec: SceneSpec) -> OracleScene:
    """Render the scene for ``spec``: bit-identical for identical specs."""
    stream = SeededStream(spec.seed).derive(0x5CE11E)
    boxes: list = []
    tools: list[SceneTool] = []
    for i in range(spec.tool_count):
        kind = _TOOL_ORDER[stream.randint(0, len(_TOOL_ORDER) - 1)]
        tool = None
        for _ in range(100):
            tool = _pose_tool(kind, stream, spec, boxes)
            if tool is not None:
                break
        if tool is None:
            raise RuntimeError(f"could not place tool {i} ({kind}) after 100 samples")
        tools.append(tool)

    h, w = spec.height, spec.width
    c0 = np.array([stream.randint(20, 120) for _ in range(3)], dtype=np.float64)
    c1 = np.array([stream.randint(20, 120) for _ in range(3)], dtype=np.float64)
    t = np.linspace(0.0, 1.0, h)[:, None]
    rows = np.floor(c0[None, :] + (c1 - c0)[None, :] * t + 0.5).astype(np.uint8)
    left = np.repeat(rows[:, None, :], w, axis=1).copy()
    depth = np.full((h, w), 3000, dtype=np.uint16)
    right = left.copy()

    for tool in sorted(tools, key=lambda tl: -tl.depth_mm):  # far to near
        disp = round_half_up(spec.focal_px * spec.baseline_m * 1000.0 / tool.depth_mm)
        for class_id, shape in tool.parts:
            mask = rasterize(shape, w, h).arr
            left[mask] = _PALETTE[class_id]
            depth[mask] = tool.depth_mm
            rmask = rasterize(shape.translated(-disp, 0), w, h).arr
            right[rmask] = _PALETTE[class_id]

    gt = tuple(
        AffordanceInstance(
            class_id=cid,
            role=default_taxonomy().role_of(cid),
            confidence=1.0,
            shape=shape,
        )
        for tool in tools
        for cid, shape in tool.parts
    )
    return OracleScene(
        spec=spec, left=left, right=right, depth_mm=depth, ground_truth=gt, tools=tuple(tools)
    )


def oracle_segment(spec: SceneSpec, frame_id: int) -> list[AffordanceInstance]:
    """Predictions for one frame: ground truth translated by a seeded offset
    of per-axis magnitude <= translate_px, confidence drawn (and quantized to
    the wire's 1e-4) in [confidence_floor, 1]. Pure in (spec, frame_id)."""
    scene = _scene_cache(spec)
    stream = SeededStream(spec.seed).derive(0x0FF5E7).derive(frame_id)
    out = []
    for inst in scene.ground_truth:
        t = spec.translate_px
        dx = stream.randint(-t, t) if t else 0
        dy = stream.randint(-t, t) if t else 0
        minx, miny, _, _ = inst.shape.bounds()
        dx = max(dx, -int(minx))
        dy = max(dy, -int(miny))
        conf = stream.uniform(spec.confidence_floor, 1.0)
        conf = round_half_up(conf * 10000) / 10000.0
        out.append(
            AffordanceInstance(
                class_id=inst.class_id,
                role=inst.role,
                confidence=conf,
                shape=inst.shape.translated(dx, dy),
            )
        )
    return out


_SCENES: dict[SceneSpec, OracleScene] = {}
_SCENES_LOCK = threading.Lock()


def _scene_cache(spec: SceneSpec) -> OracleScene:
    with _SCENES_LOCK:
        if spec not in _SCENES:
            _SCENES[spec] = oracle_scene(spec)
        return _SCENES[spec]


class OracleProvider:
    """Serves oracle predictions; the frame pixels are ignored, the scene is
    a pure function of (spec, frame_id)."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec

    def segment(self, frame: FrameEnvelope) -> list[AffordanceInstance]:
        return oracle_segment(self.spec, frame.frame_id)


# ---------------------------------------------------------------------------
# annotation replay
# ---------------------------------------------------------------------------

class ReplayProvider:
    """Returns stored annotations for frame_id == image_id; optionally sleeps
    ``latency_us`` per call to emulate inference time."""

    def __init__(
        self,
        annotations: AnnotationSet,
        latency_us: Optional[int] = None,
        taxonomy: Optional[ClassTaxonomy] = None,
    ):
        self.annotations = annotations
        self.latency_us = latency_us
        self.taxonomy = taxonomy or annotations.taxonomy

    def segment(self, frame: FrameEnvelope) -> list[AffordanceInstance]:
        if self.latency_us:
            time.sleep(self.latency_us / 1e6)
        if self.annotations.image(frame.frame_id) is None:
            log.warning("no image for frame_id %d; returning no detections", frame.frame_id)
            return []
        return [
            AffordanceInstance(
                class_id=ann.class_id,
                role=self.taxonomy.role_of(ann.class_id),
                confidence=ann.score if ann.score is not None else 1.0,
                shape=ann.shape,
            )
            for ann in self.annotations.by_image(frame.frame_id)
        ]


def replay_segment(
    frame_id: int, annotations: AnnotationSet, latency_us: Optional[int] = None
) -> list[AffordanceInstance]:
    provider = ReplayProvider(annotations, latency_us=latency_us)
    blank = FrameEnvelope(
        frame_id=frame_id,
        timestamp_us=0,
        eye=Eye.MONO,
        width=1,
        height=1,
        pixels=np.zeros((1, 1, 3), dtype=np.uint8),
    )
    return provider.segment(blank)


# ---------------------------------------------------------------------------
# server shell
# ---------------------------------------------------------------------------

class Server:
    """Exposes a provider over the wire protocol; one session per connection,
    instances under the confidence threshold dropped before encoding."""

    def __init__(
        self,
        provider: SegmentationProvider,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    ):
        self.provider = provider
        self.host = host
        self.port = port
        self.confidence_threshold = confidence_threshold
        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._sessions: list[threading.Thread] = []
        self._stop = threading.Event()

    def start(self) -> int:
        """Bind and accept in the background; returns the bound port."""
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, self.port))
        self._listener.listen(16)
        # closing a listener does not wake a blocked accept(); poll instead
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        log.info("serving on %s:%d (threshold %.2f)", self.host, self.port, self.confidence_threshold)
        return self.port

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return  # listener closed
            conn.settimeout(None)
            t = threading.Thread(target=self._session, args=(conn, addr), daemon=True)
            t.start()
            self._sessions.append(t)

    def _session(self, conn: socket.socket, addr) -> None:
        try:
            try:
                wire.handshake(conn, "server")
            except wire.ProtocolError as exc:
                log.warning("handshake failed from %s: %s", addr, exc)
                self._best_effort_error(conn, wire.ERR_MALFORMED, 0, str(exc))
                return
            while not self._stop.is_set():
                try:
                    msg = wire.read_message(conn)
                except wire.TransportError:
                    return  # peer gone
                except wire.ProtocolError as exc:
                    self._best_effort_error(conn, wire.ERR_MALFORMED, 0, str(exc))
                    return
                if msg.kind != wire.KIND_FRAME:
                    self._best_effort_error(
                        conn, wire.ERR_MALFORMED, 0, f"unexpected kind 0x{msg.kind:02X}"
                    )
                    return
                try:
                    frame = wire.decode_frame(msg.payload)
                except wire.ProtocolError as exc:
                    self._best_effort_error(conn, wire.ERR_MALFORMED, 0, str(exc))
                    return
                t0 = time.perf_counter()
                try:
                    instances = self.provider.segment(frame)
                except Exception as exc:  # provider failure: session survives
                    log.warning("provider failed on frame %d: %s", frame.frame_id, exc)
                    self._best_effort_error(conn, wire.ERR_PROVIDER, frame.frame_id, str(exc))
                    continue
                inference_us = int((time.perf_counter() - t0) * 1e6)
                kept = tuple(
                    i for i in instances if i.confidence >= self.confidence_threshold
                )
                wire.write_message(
                    conn,
                    wire.encode_result(
                        wire.ResultPayload(
                            frame_id=frame.frame_id,
                            inference_us=inference_us,
                            instances=kept,
                        )
                    ),
                )
        except wire.TransportError:
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    @staticmethod
    def _best_effort_error(conn: socket.socket, code: int, frame_id: int, message: str) -> None:
        try:
            wire.write_message(conn, wire.encode_error(code, frame_id, message))
        except wire.TransportError:
            pass

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        for t in self._sessions:
            t.join(timeout=2.0)

    def __enter__(self) -> "Server":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(
    provider: SegmentationProvider,
    endpoint: tuple[str, int] = ("127.0.0.1", DEFAULT_PORT),
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> None:
    """Run a server until interrupted."""
    server = Server(provider, endpoint[0], endpoint[1], confidence_threshold)
    server.start()
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


# ---------------------------------------------------------------------------
# remote client
# ---------------------------------------------------------------------------

class RemoteClient:
    """Client side of the wire protocol. Multiple frames may be in flight;
    results correlate by frame_id only, so out-of-order arrival is handled by
    an internal pending map. One writer plus one reader may use the client
    concurrently."""

    def __init__(
        self,
        host: str,
        port: int,
        timeout_s: float = DEFAULT_RESULT_TIMEOUT_S,
        connect_timeout_s: float = 5.0,
    ):
        self.timeout_s = timeout_s
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout_s)
        except OSError as exc:
            raise wire.TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        wire.handshake(self._sock, "client")
        self._sock.settimeout(timeout_s)
        self._pending: dict[int, wire.ResultPayload] = {}
        self._send_lock = threading.Lock()

    def send_frame(self, frame: FrameEnvelope) -> None:
        with self._send_lock:
            wire.write_message(self._sock, wire.encode_frame(frame))

    def recv_result(self) -> wire.ResultPayload:
        """Next RESULT off the stream, in arrival order."""
        msg = wire.read_message(self._sock)
        if msg.kind == wire.KIND_ERROR:
            err = wire.decode_error(msg.payload)
            raise RemoteError(err.code, err.frame_id, err.message)
        if msg.kind != wire.KIND_RESULT:
            raise wire.ProtocolError(f"expected RESULT, got kind 0x{msg.kind:02X}")
        return wire.decode_result(msg.payload)

    def result_for(self, frame_id: int, timeout_s: Optional[float] = None) -> wire.ResultPayload:
        """RESULT matching ``frame_id``; other frames' results are buffered."""
        if frame_id in self._pending:
            return self._pending.pop(frame_id)
        deadline = time.monotonic() + (timeout_s if timeout_s is not None else self.timeout_s)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ResultTimeout(f"timed out waiting for result of frame {frame_id}")
            self._sock.settimeout(remaining)
            try:
                result = self.recv_result()
            except wire.TransportError as exc:
                if "timed out" in str(exc):
                    raise ResultTimeout(
                        f"timed out waiting for result of frame {frame_id}"
                    ) from exc
                raise
            finally:
                self._sock.settimeout(self.timeout_s)
            if result.frame_id == frame_id:
                return result
            self._pending[result.frame_id] = result

    def segment(self, frame: FrameEnvelope) -> list[AffordanceInstance]:
        """Provider-compatible request/response call."""
        self.send_frame(frame)
        return list(self.result_for(frame.frame_id).instances)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "RemoteClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def remote_segment(frame: FrameEnvelope, connection: RemoteClient) -> list[AffordanceInstance]:
    return connection.segment(frame)
