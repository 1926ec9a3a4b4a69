"""The sidecar server: accepts protocol connections, runs the configured
plug-in per FRAME, and answers RESULT messages.

Error handling per message: a plug-in exception answers ERROR 500 and the
session survives; an undecodable FRAME payload (unknown pixel format, bad
length) answers ERROR and keeps the connection open, since framing is still
intact; framing-level violations close the connection.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import wire
from .contours import mask_to_rings
from .plugins import (
    UNKNOWN_CLASS,
    Detection,
    ModelPlugin,
    default_role,
    load_plugin,
)

log = logging.getLogger("cookar_adapter")

DEFAULT_THRESHOLD = 0.4
DEFAULT_PORT = 7466


@dataclass
class AdapterConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    confidence_threshold: float = DEFAULT_THRESHOLD
    plugin: str = "null"
    fixture_path: Optional[str] = None
    label_map: dict[int, int] = field(default_factory=dict)  # model label -> class id

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence threshold must be in [0, 1]")
        for label, class_id in self.label_map.items():
            if not (0 <= class_id < 18 or class_id == UNKNOWN_CLASS):
                raise ValueError(f"label {label} maps to invalid class {class_id}")

    @classmethod
    def from_file(cls, path: str | Path) -> "AdapterConfig":
        data = json.loads(Path(path).read_text())
        known = {"host", "port", "confidence_threshold", "plugin", "fixture_path", "label_map"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "label_map" in data:
            raw = data["label_map"]
            data["label_map"] = {
                int(k): (UNKNOWN_CLASS if v == "unknown" else int(v))
                for k, v in raw.items()
            }
        return cls(**data)


def _round_half_up(x: float) -> int:
    import math

    return int(math.floor(x + 0.5))


def detection_to_instance(det: Detection, label_map: dict[int, int]) -> wire.OutInstance:
    """Label mapping, mask-to-rings conversion, and integer quantization."""
    class_id = label_map.get(det.label, det.label if 0 <= det.label < 18 else UNKNOWN_CLASS)
    role = det.role if det.role is not None else default_role(class_id)
    if det.mask is not None:
        rings = mask_to_rings(np.asarray(det.mask, dtype=bool))
    else:
        rings = tuple(
            tuple((_round_half_up(x), _round_half_up(y)) for x, y in ring)
            for ring in det.rings
        )
    return wire.OutInstance(
        class_id=class_id, role=role, confidence=det.score, rings=rings
    )


class AdapterServer:
    def __init__(self, config: AdapterConfig, plugin: Optional[ModelPlugin] = None):
        self.config = config
        self.plugin = plugin or load_plugin(config.plugin, config.fixture_path)
        self._plugin_lock: Optional[threading.Lock] = (
            None if self.plugin.concurrent_safe else threading.Lock()
        )
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self.port = config.port

    def start(self) -> int:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.config.host, self.config.port))
        self._listener.listen(8)
        # closing a listener does not wake a blocked accept(); poll instead
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)
        log.info("adapter serving %s on %s:%d", self.plugin.name, self.config.host, self.port)
        return self.port

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            worker = threading.Thread(target=self._session, args=(conn,), daemon=True)
            worker.start()
            self._threads.append(worker)

    def _segment(self, frame: wire.DecodedFrame):
        if self._plugin_lock is not None:
            with self._plugin_lock:
                return self.plugin.segment(frame)
        return self.plugin.segment(frame)

    def _session(self, conn: socket.socket) -> None:
        try:
            wire.send_bytes(conn, wire.hello_bytes())
            kind, payload = wire.read_frame(conn)
            if kind != wire.HELLO:
                wire.send_bytes(conn, wire.error_bytes(wire.ERR_MALFORMED, 0, "expected HELLO"))
                return
            wire.check_hello(payload)
            while not self._stop.is_set():
                try:
                    kind, payload = wire.read_frame(conn)
                except wire.AdapterTransportError:
                    return
                if kind != wire.FRAME:
                    wire.send_bytes(
                        conn,
                        wire.error_bytes(wire.ERR_MALFORMED, 0, f"unexpected kind {kind}"),
                    )
                    return
                try:
                    frame = wire.decode_frame_payload(payload)
                except wire.AdapterProtocolError as exc:
                    # payload-level problem: report it, keep the session
                    wire.send_bytes(
                        conn, wire.error_bytes(wire.ERR_UNSUPPORTED_FORMAT, 0, str(exc))
                    )
                    continue
                t0 = time.perf_counter()
                try:
                    detections = self._segment(frame)
                    instances = [
                        detection_to_instance(d, self.config.label_map)
                        for d in detections
                        if d.score >= self.config.confidence_threshold
                    ]
                except Exception as exc:  # plug-in failure: session survives
                    log.warning("plug-in failed on frame %d: %s", frame.frame_id, exc)
                    wire.send_bytes(
                        conn, wire.error_bytes(wire.ERR_PLUGIN, frame.frame_id, str(exc))
                    )
                    continue
                inference_us = int((time.perf_counter() - t0) * 1e6)
                wire.send_bytes(
                    conn, wire.result_bytes(frame.frame_id, inference_us, instances)
                )
        except (wire.AdapterProtocolError, wire.AdapterTransportError) as exc:
            log.debug("session ended: %s", exc)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def __enter__(self) -> "AdapterServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_inference(config: AdapterConfig) -> None:
    """Run the adapter until interrupted."""
    server = AdapterServer(config)
    port = server.start()
    print(f"adapter listening on {config.host}:{port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
