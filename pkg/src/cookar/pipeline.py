"""Stage-graph orchestration: capture -> send -> segment -> receive ->
composite -> present, in a deterministic serial mode or a pipelined mode with
bounded hand-off queues, plus per-stage latency accounting.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import wire
from .annotations import AnnotationSet
from .backends import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_PORT,
    OracleProvider,
    RemoteClient,
    RemoteError,
    ReplayProvider,
    SceneSpec,
    SegmentationProvider,
    oracle_scene,
)
from .imageio import read_depth_pgm, read_png, write_png
from .overlay import PRESET_COOKAR_STUDY, StyleSpec, composite, composite_stereo
from .profiler import END_TO_END, LatencyReport, Profiler, latency_report
from .types import AffordanceInstance, Eye, FrameEnvelope

log = logging.getLogger("cookar.pipeline")

QUEUE_CAPACITY = 4


class PipelineError(Exception):
    pass


@dataclass(frozen=True)
class StereoConfig:
    focal_px: float = 500.0
    baseline_m: float = 0.063

    def __post_init__(self):
        if self.focal_px <= 0 or self.baseline_m <= 0:
            raise ValueError("stereo parameters must be positive when stereo is enabled")


@dataclass
class RunConfig:
    source: str  # synthetic | dir | replay
    backend: str = "inproc"  # inproc | remote
    scene: Optional[SceneSpec] = None
    input_path: Optional[Path] = None  # dir source: frame directory; replay: annotation JSON
    images_dir: Optional[Path] = None  # replay source: directory holding the image files
    endpoint: tuple[str, int] = ("127.0.0.1", DEFAULT_PORT)
    provider: Optional[SegmentationProvider] = None
    style: StyleSpec = field(default_factory=lambda: PRESET_COOKAR_STUDY)
    stereo: Optional[StereoConfig] = None
    mode: str = "serial"  # serial | pipelined
    drop_policy: str = "block"  # block | drop_late
    frame_count: Optional[int] = None
    out_dir: Optional[Path] = None  # None: profile only, no PNG output
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    inference_latency_us: Optional[int] = None  # replay emulation
    stage_delay_ms: dict[str, float] = field(default_factory=dict)  # per-stage sleeps
    result_timeout_s: float = 5.0

    def __post_init__(self):
        if self.source not in ("synthetic", "dir", "replay"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.backend not in ("inproc", "remote"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.mode not in ("serial", "pipelined"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.drop_policy not in ("block", "drop_late"):
            raise ValueError(f"unknown drop_policy {self.drop_policy!r}")


@dataclass
class RunResult:
    report: LatencyReport
    frames_sourced: int
    frames_presented: int
    frames_dropped: int
    out_dir: Optional[Path]
    error: Optional[str] = None


@dataclass
class _SourceFrame:
    frame: FrameEnvelope
    right: Optional[np.ndarray] = None


@dataclass
class _Job:
    src: _SourceFrame
    t_start: float
    stage_us: dict[str, int] = field(default_factory=dict)
    instances: list[AffordanceInstance] = field(default_factory=list)


_SENTINEL = object()


# ---------------------------------------------------------------------------
# frame sources
# ---------------------------------------------------------------------------

def _synthetic_source(config: RunConfig, t0: float) -> Iterator[_SourceFrame]:
    if config.scene is None:
        raise PipelineError("synthetic source requires a scene spec")
    scene = oracle_scene(config.scene)
    count = config.frame_count if config.frame_count is not None else 50
    for fid in range(count):
        frame = FrameEnvelope(
            frame_id=fid,
            timestamp_us=int((time.perf_counter() - t0) * 1e6),
            eye=Eye.LEFT,
            width=scene.spec.width,
            height=scene.spec.height,
            pixels=scene.left,
            depth_mm=scene.depth_mm,
        )
        yield _SourceFrame(frame=frame, right=scene.right)


def _dir_source(config: RunConfig, t0: float) -> Iterator[_SourceFrame]:
    if config.input_path is None:
        raise PipelineError("dir source requires an input directory")
    root = Path(config.input_path)
    paths = sorted(p for p in root.glob("*.png") if not p.stem.endswith("_r"))
    if config.frame_count is not None:
        paths = paths[: config.frame_count]
    for fid, path in enumerate(paths):
        pixels = read_png(path)
        right_path = path.with_name(path.stem + "_r.png")
        right = read_png(right_path) if right_path.exists() else None
        depth_path = path.with_suffix(".pgm")
        depth = read_depth_pgm(depth_path) if depth_path.exists() else None
        frame = FrameEnvelope(
            frame_id=fid,
            timestamp_us=int((time.perf_counter() - t0) * 1e6),
            eye=Eye.LEFT if right is not None else Eye.MONO,
            width=pixels.shape[1],
            height=pixels.shape[0],
            pixels=pixels,
            depth_mm=depth,
        )
        yield _SourceFrame(frame=frame, right=right)


def _replay_source(config: RunConfig, t0: float) -> Iterator[_SourceFrame]:
    if config.input_path is None:
        raise PipelineError("replay source requires an annotation file")
    annotations = AnnotationSet.load(config.input_path)
    images = sorted(annotations.images, key=lambda im: im.image_id)
    if config.frame_count is not None:
        images = images[: config.frame_count]
    for im in images:
        pixels = None
        if config.images_dir is not None:
            path = Path(config.images_dir) / im.file_name
            if path.exists():
                pixels = read_png(path)
        if pixels is None:
            pixels = np.zeros((im.height, im.width, 3), dtype=np.uint8)
        frame = FrameEnvelope(
            frame_id=im.image_id,
            timestamp_us=int((time.perf_counter() - t0) * 1e6),
            eye=Eye.MONO,
            width=im.width,
            height=im.height,
            pixels=pixels,
        )
        yield _SourceFrame(frame=frame)


_SOURCES = {"synthetic": _synthetic_source, "dir": _dir_source, "replay": _replay_source}


# ---------------------------------------------------------------------------
# backend drivers
# ---------------------------------------------------------------------------

class _InprocDriver:
    """Provider in this process; the confidence threshold is applied here so
    inproc and served backends behave identically."""

    def __init__(self, provider: SegmentationProvider, threshold: float):
        self.provider = provider
        self.threshold = threshold

    def send(self, frame: FrameEnvelope) -> None:
        pass

    def collect(self, frame: FrameEnvelope, delay_s: float) -> tuple[list, int]:
        t0 = time.perf_counter()
        if delay_s:
            time.sleep(delay_s)
        instances = self.provider.segment(frame)
        inference_us = int((time.perf_counter() - t0) * 1e6)
        kept = [i for i in instances if i.confidence >= self.threshold]
        return kept, inference_us

    def close(self) -> None:
        pass


class _RemoteDriver:
    def __init__(self, endpoint: tuple[str, int], timeout_s: float):
        self.client = RemoteClient(endpoint[0], endpoint[1], timeout_s=timeout_s)

    def send(self, frame: FrameEnvelope) -> None:
        self.client.send_frame(frame)

    def collect(self, frame: FrameEnvelope, delay_s: float) -> tuple[list, int]:
        result = self.client.result_for(frame.frame_id)
        if delay_s:
            time.sleep(delay_s)
        return list(result.instances), result.inference_us

    def recv_any(self) -> tuple[int, list, int]:
        result = self.client.recv_result()
        return result.frame_id, list(result.instances), result.inference_us

    def close(self) -> None:
        self.client.close()


def _make_provider(config: RunConfig) -> SegmentationProvider:
    if config.provider is not None:
        return config.provider
    if config.source == "synthetic":
        if config.scene is None:
            raise PipelineError("inproc oracle backend needs a scene spec")
        return OracleProvider(config.scene)
    if config.source == "replay":
        return ReplayProvider(
            AnnotationSet.load(config.input_path), latency_us=config.inference_latency_us
        )
    raise PipelineError("dir source with inproc backend requires an explicit provider")


# ---------------------------------------------------------------------------
# the run itself
# ---------------------------------------------------------------------------

class _Renderer:
    def __init__(self, config: RunConfig, profiler: Profiler):
        self.config = config
        self.profiler = profiler
        self.presented = 0
        self.dropped = 0
        self.last_presented = -1
        if config.out_dir is not None:
            Path(config.out_dir).mkdir(parents=True, exist_ok=True)

    def present(self, job: _Job) -> None:
        cfg = self.config
        frame = job.src.frame
        if cfg.drop_policy == "drop_late" and frame.frame_id < self.last_presented:
            self.dropped += 1
            return
        t0 = time.perf_counter()
        if cfg.stereo is not None:
            if job.src.right is None or frame.depth_mm is None:
                raise PipelineError(
                    f"stereo run needs right image and depth map (frame {frame.frame_id})"
                )
            left, right = composite_stereo(
                frame.pixels,
                job.src.right,
                job.instances,
                cfg.style,
                frame.depth_mm,
                cfg.stereo.focal_px,
                cfg.stereo.baseline_m,
            )
        else:
            left = composite(frame.pixels, job.instances, cfg.style, depth_mm=frame.depth_mm)
            right = None
        if cfg.out_dir is not None:
            write_png(Path(cfg.out_dir) / f"frame_{frame.frame_id:06}.png", left)
            if right is not None:
                write_png(Path(cfg.out_dir) / f"frame_{frame.frame_id:06}_r.png", right)
        delay = cfg.stage_delay_ms.get("render", 0.0)
        if delay:
            time.sleep(delay / 1000.0)
        job.stage_us["render"] = int((time.perf_counter() - t0) * 1e6)
        for stage, us in job.stage_us.items():
            self.profiler.record_stage(frame.frame_id, stage, us)
        self.profiler.record_stage(
            frame.frame_id, END_TO_END, int((time.perf_counter() - job.t_start) * 1e6)
        )
        self.last_presented = frame.frame_id
        self.presented += 1


def run(config: RunConfig) -> RunResult:
    """Execute one pipeline run. A transport failure mid-run aborts and
    returns a partial report flagged incomplete."""
    t0 = time.perf_counter()
    source_iter = _SOURCES[config.source](config, t0)

    if config.backend == "remote":
        driver = _RemoteDriver(config.endpoint, timeout_s=config.result_timeout_s)
    else:
        driver = _InprocDriver(_make_provider(config), config.confidence_threshold)

    profiler = Profiler()
    renderer = _Renderer(config, profiler)
    delays = config.stage_delay_ms
    error: Optional[str] = None
    sourced = 0

    try:
        if config.mode == "serial":
            sourced = _run_serial(config, source_iter, driver, renderer, delays)
        else:
            sourced = _run_pipelined(config, source_iter, driver, renderer, delays)
    except (wire.TransportError, RemoteError) as exc:
        error = str(exc)
        log.error("run aborted: %s", exc)
    finally:
        driver.close()

    wall_s = time.perf_counter() - t0
    report = latency_report(
        profiler.timings(),
        mode=config.mode,
        drops=renderer.dropped,
        wall_s=wall_s,
        incomplete=error is not None,
    )
    return RunResult(
        report=report,
        frames_sourced=sourced,
        frames_presented=renderer.presented,
        frames_dropped=renderer.dropped,
        out_dir=config.out_dir,
        error=error,
    )


def _run_serial(config, source_iter, driver, renderer, delays) -> int:
    sourced = 0
    while True:
        t_start = time.perf_counter()
        try:
            src = next(source_iter)
        except StopIteration:
            break
        if delays.get("capture"):
            time.sleep(delays["capture"] / 1000.0)
        sourced += 1
        job = _Job(src=src, t_start=t_start)
        job.stage_us["capture"] = int((time.perf_counter() - t_start) * 1e6)

        t1 = time.perf_counter()
        driver.send(src.frame)
        if delays.get("stream_to_server"):
            time.sleep(delays["stream_to_server"] / 1000.0)
        job.stage_us["stream_to_server"] = int((time.perf_counter() - t1) * 1e6)

        t2 = time.perf_counter()
        instances, inference_us = driver.collect(
            src.frame, delays.get("inference", 0.0) / 1000.0
        )
        collect_us = int((time.perf_counter() - t2) * 1e6)
        job.instances = instances
        job.stage_us["inference"] = inference_us

        t3 = time.perf_counter()
        if delays.get("stream_back"):
            time.sleep(delays["stream_back"] / 1000.0)
        job.stage_us["stream_back"] = max(0, collect_us - inference_us) + int(
            (time.perf_counter() - t3) * 1e6
        )
        renderer.present(job)
    return sourced


def _run_pipelined(config, source_iter, driver, renderer, delays) -> int:
    q_send: queue.Queue = queue.Queue(maxsize=QUEUE_CAPACITY)
    q_collect: queue.Queue = queue.Queue(maxsize=QUEUE_CAPACITY)
    q_render: queue.Queue = queue.Queue(maxsize=QUEUE_CAPACITY)
    stop = threading.Event()
    failures: list[BaseException] = []
    sourced = [0]

    def guard(fn):
        def wrapped():
            try:
                fn()
            except BaseException as exc:  # propagate to the main thread
                failures.append(exc)
                stop.set()

        return wrapped

    def put(q, item):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def capture_worker():
        while not stop.is_set():
            t_start = time.perf_counter()
            try:
                src = next(source_iter)
            except StopIteration:
                break
            if delays.get("capture"):
                time.sleep(delays["capture"] / 1000.0)
            sourced[0] += 1
            job = _Job(src=src, t_start=t_start)
            job.stage_us["capture"] = int((time.perf_counter() - t_start) * 1e6)
            if not put(q_send, job):
                return
        put(q_send, _SENTINEL)

    def send_worker():
        while not stop.is_set():
            job = _get(q_send, stop)
            if job is None:
                return
            if job is _SENTINEL:
                put(q_collect, _SENTINEL)
                return
            t1 = time.perf_counter()
            driver.send(job.src.frame)
            if delays.get("stream_to_server"):
                time.sleep(delays["stream_to_server"] / 1000.0)
            job.stage_us["stream_to_server"] = int((time.perf_counter() - t1) * 1e6)
            if not put(q_collect, job):
                return

    def collect_worker():
        unordered = (
            config.drop_policy == "drop_late" and isinstance(driver, _RemoteDriver)
        )
        if not unordered:
            while not stop.is_set():
                job = _get(q_collect, stop)
                if job is None:
                    return
                if job is _SENTINEL:
                    put(q_render, _SENTINEL)
                    return
                t2 = time.perf_counter()
                instances, inference_us = driver.collect(
                    job.src.frame, delays.get("inference", 0.0) / 1000.0
                )
                collect_us = int((time.perf_counter() - t2) * 1e6)
                _finish_collect(job, instances, inference_us, collect_us, delays)
                if not put(q_render, job):
                    return
            return

        # drop_late over a remote backend: results are consumed in arrival
        # order; results beating their job's local hand-off are parked
        outstanding: dict[int, tuple[_Job, float]] = {}
        parked: dict[int, tuple[list, int]] = {}
        done_sending = False

        def emit(job: _Job, t2: float, instances: list, inference_us: int) -> bool:
            collect_us = int((time.perf_counter() - t2) * 1e6)
            _finish_collect(job, instances, inference_us, collect_us, delays)
            return put(q_render, job)

        while not stop.is_set():
            while True:  # drain everything the send worker has handed off
                try:
                    item = q_collect.get_nowait()
                except queue.Empty:
                    break
                if item is _SENTINEL:
                    done_sending = True
                    break
                outstanding[item.src.frame.frame_id] = (item, time.perf_counter())
            matched = [fid for fid in parked if fid in outstanding]
            for fid in matched:
                instances, inference_us = parked.pop(fid)
                job, t2 = outstanding.pop(fid)
                if not emit(job, t2, instances, inference_us):
                    return
            if matched:
                continue
            if not outstanding:
                if done_sending and not parked:
                    put(q_render, _SENTINEL)
                    return
                time.sleep(0.001)  # job hand-off or sentinel still in flight
                continue
            frame_id, instances, inference_us = driver.recv_any()
            if frame_id in outstanding:
                job, t2 = outstanding.pop(frame_id)
                if not emit(job, t2, instances, inference_us):
                    return
            else:
                parked[frame_id] = (instances, inference_us)

    def render_worker():
        while not stop.is_set():
            job = _get(q_render, stop)
            if job is None or job is _SENTINEL:
                return
            renderer.present(job)

    workers = [
        threading.Thread(target=guard(capture_worker), daemon=True),
        threading.Thread(target=guard(send_worker), daemon=True),
        threading.Thread(target=guard(collect_worker), daemon=True),
        threading.Thread(target=guard(render_worker), daemon=True),
    ]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    if failures:
        raise failures[0]
    return sourced[0]


def _finish_collect(job, instances, inference_us, collect_us, delays) -> None:
    job.instances = instances
    job.stage_us["inference"] = inference_us
    t3 = time.perf_counter()
    if delays.get("stream_back"):
        time.sleep(delays["stream_back"] / 1000.0)
    job.stage_us["stream_back"] = max(0, collect_us - inference_us) + int(
        (time.perf_counter() - t3) * 1e6
    )


def _get(q: queue.Queue, stop: threading.Event):
    while not stop.is_set():
        try:
            return q.get(timeout=0.05)
        except queue.Empty:
            continue
    return None
