"""Single executable for the whole artifact: serve a backend, run the
pipeline, evaluate predictions, curate datasets, and profile latency.

Exit codes: 0 success, 1 usage error, 2 runtime error. The COOKAR_LOG
environment variable (error | warn | info | debug) sets log verbosity on
stderr. Flags take precedence over --config file values, which take
precedence over built-in defaults; unknown keys in a config file are an
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .annotations import Annotation, AnnotationSet, ImageInfo
from .backends import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_PORT,
    OracleProvider,
    ReplayProvider,
    SceneSpec,
    Server,
)
from .dataset import (
    AugmentParams,
    SplitSpec,
    augment,
    filter_frames,
    normalize_resolution,
    per_image_seed,
    split,
)
from .imageio import read_png, write_png
from .metrics import IOU_THRESHOLDS, evaluate, render_table
from .pipeline import RunConfig, StereoConfig, run
from .overlay import resolve_style
from .rng import mix64

log = logging.getLogger("cookar")

_COLOR_NOTE = (
    "style presets: cookar-study = both roles solid "
    "(grabbable #3BE8B0, hazardous #FC626A); preferred = grabbable solid "
    "#3BE8B0, hazardous outline #FC626A; extended roles outlined white"
)
_THRESHOLD_NOTE = "IoU thresholds: " + ", ".join(f"{t:.2f}" for t in IOU_THRESHOLDS)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise UsageError(message)


DEFAULTS: dict[str, dict] = {
    "serve": {
        "backend": None,
        "host": "127.0.0.1",
        "port": DEFAULT_PORT,
        "annotations": None,
        "threshold": DEFAULT_CONFIDENCE_THRESHOLD,
        "inference_ms": None,
        "seed": 1,
        "tools": 3,
        "width": 320,
        "height": 240,
        "translate_px": 0,
        "confidence_floor": 1.0,
    },
    "run": {
        "source": None,
        "backend": "inproc",
        "endpoint": f"127.0.0.1:{DEFAULT_PORT}",
        "style": "cookar-study",
        "stereo": False,
        "focal": 500.0,
        "baseline": 0.063,
        "mode": "serial",
        "drop_policy": "block",
        "out": None,
        "frames": None,
        "seed": 1,
        "tools": 3,
        "width": 320,
        "height": 240,
        "input": None,
        "images_dir": None,
        "threshold": DEFAULT_CONFIDENCE_THRESHOLD,
        "inference_ms": None,
        "timeout": 5.0,
    },
    "eval": {"pred": None, "gt": None, "out": None, "model": None, "max_dets": 100},
    "dataset.filter": {"gt": None, "skip": 20, "out": None},
    "dataset.augment": {
        "images": None,
        "gt": None,
        "out": None,
        "seed": 1,
        "copies": 1,
        "keep_originals": False,
        "max_zoom": 0.40,
        "max_rotation": 15.0,
        "max_brightness": 0.15,
        "max_blur": 2.5,
        "max_noise": 0.001,
    },
    "dataset.resize": {"images": None, "gt": None, "out": None, "width": 640, "height": 480},
    "dataset.split": {"gt": None, "seed": 1, "out": None, "ratios": "0.82,0.12,0.06"},
}
DEFAULTS["profile"] = {k: v for k, v in DEFAULTS["run"].items() if k != "out"}
DEFAULTS["profile"]["report"] = None


def _add(parser: argparse.ArgumentParser, *names, **kwargs):
    kwargs.setdefault("default", argparse.SUPPRESS)
    parser.add_argument(*names, **kwargs)


def build_parser() -> _Parser:
    parser = _Parser(prog="cookar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="expose a segmentation backend over TCP")
    _add(p, "--backend", choices=["oracle", "replay"], required=True)
    _add(p, "--host", help="bind address (default: 127.0.0.1)")
    _add(p, "--port", type=int, help=f"bind port, 0 for ephemeral (default: {DEFAULT_PORT})")
    _add(p, "--annotations", help="annotation JSON for the replay backend")
    _add(p, "--threshold", type=float, help="confidence threshold (default: 0.4)")
    _add(p, "--inference-ms", type=float, help="emulated inference latency in ms (default: off; 15.95 is the reference value)")
    _add(p, "--seed", type=int, help="oracle scene seed (default: 1)")
    _add(p, "--tools", type=int, help="oracle tool count 1-6 (default: 3)")
    _add(p, "--width", type=int, help="oracle canvas width (default: 320)")
    _add(p, "--height", type=int, help="oracle canvas height (default: 240)")
    _add(p, "--translate-px", type=int, help="oracle prediction jitter in px (default: 0)")
    _add(p, "--confidence-floor", type=float, help="oracle confidence floor (default: 1.0)")
    _add(p, "--config", help="JSON config file; flags override it")

    for name, hlp in (("run", "run the pipeline and write composited frames"),
                      ("profile", "run the pipeline and emit only the latency report")):
        p = sub.add_parser(name, help=hlp, epilog=_COLOR_NOTE)
        _add(p, "--source", choices=["synthetic", "dir", "replay"], required=True)
        _add(p, "--backend", choices=["inproc", "remote"], help="(default: inproc)")
        _add(p, "--endpoint", help=f"remote host:port (default: 127.0.0.1:{DEFAULT_PORT})")
        _add(p, "--style", help="cookar-study | preferred | style JSON path (default: cookar-study)")
        _add(p, "--stereo", action="store_true", help="composite both eyes (default: off)")
        _add(p, "--focal", type=float, help="focal length in px (default: 500)")
        _add(p, "--baseline", type=float, help="stereo baseline in m (default: 0.063)")
        _add(p, "--mode", choices=["serial", "pipelined"], help="(default: serial)")
        _add(p, "--drop-policy", choices=["block", "drop_late"], help="(default: block)")
        if name == "run":
            _add(p, "--out", required=True, help="output directory for PNG frames + report.json")
        else:
            _add(p, "--report", help="write the latency report JSON here")
        _add(p, "--frames", type=int, help="frame count (default: 50 for synthetic)")
        _add(p, "--seed", type=int, help="synthetic scene seed (default: 1)")
        _add(p, "--tools", type=int, help="synthetic tool count (default: 3)")
        _add(p, "--width", type=int, help="synthetic canvas width (default: 320)")
        _add(p, "--height", type=int, help="synthetic canvas height (default: 240)")
        _add(p, "--input", help="frame directory (dir source) or annotation JSON (replay source)")
        _add(p, "--images-dir", help="image directory for the replay source")
        _add(p, "--threshold", type=float, help="confidence threshold (default: 0.4)")
        _add(p, "--inference-ms", type=float, help="emulated inference latency in ms (default: off)")
        _add(p, "--timeout", type=float, help="remote result timeout in s (default: 5)")
        _add(p, "--config", help="JSON config file; flags override it")

    p = sub.add_parser("eval", help="mAP / AP@50 / AP@75 over annotation files",
                       epilog=_THRESHOLD_NOTE)
    _add(p, "--pred", required=True, help="predictions JSON (annotations carry score)")
    _add(p, "--gt", required=True, help="ground-truth JSON")
    _add(p, "--out", help="write the report JSON here")
    _add(p, "--model", help="model name for the report row (default: predictions file stem)")
    _add(p, "--max-dets", type=int, help="max detections per image (default: 100)")
    _add(p, "--config", help="JSON config file; flags override it")

    p = sub.add_parser("dataset", help="dataset curation tools")
    dsub = p.add_subparsers(dest="action", required=True)

    d = dsub.add_parser("filter", help="detector-gated key-frame selection")
    _add(d, "--gt", required=True, help="annotation JSON; frames with annotations are interesting")
    _add(d, "--skip", type=int, help="frames to skip after a hit (default: 20)")
    _add(d, "--out", help="write kept frame ids JSON here")
    _add(d, "--config", help="JSON config file; flags override it")

    d = dsub.add_parser("augment", help="seeded annotation-aware augmentation")
    _add(d, "--images", required=True, help="source image directory")
    _add(d, "--gt", required=True, help="annotation JSON")
    _add(d, "--out", required=True, help="output directory")
    _add(d, "--seed", type=int, help="seed (default: 1)")
    _add(d, "--copies", type=int,
         help="augmented copies per image (default: 1; two seeded copies plus "
              "--keep-originals roughly triples a set)")
    _add(d, "--keep-originals", action="store_true", help="copy source images through (default: off)")
    _add(d, "--max-zoom", type=float, help="max crop zoom fraction (default: 0.40)")
    _add(d, "--max-rotation", type=float, help="max |rotation| in degrees (default: 15)")
    _add(d, "--max-brightness", type=float, help="max |brightness| fraction (default: 0.15)")
    _add(d, "--max-blur", type=float, help="max Gaussian sigma in px (default: 2.5)")
    _add(d, "--max-noise", type=float, help="max noisy pixel fraction (default: 0.001)")
    _add(d, "--config", help="JSON config file; flags override it")

    d = dsub.add_parser("resize", help="stretch-resize images + annotations")
    _add(d, "--images", required=True, help="source image directory")
    _add(d, "--gt", required=True, help="annotation JSON")
    _add(d, "--out", required=True, help="output directory")
    _add(d, "--width", type=int, help="target width (default: 640)")
    _add(d, "--height", type=int, help="target height (default: 480)")
    _add(d, "--config", help="JSON config file; flags override it")

    d = dsub.add_parser("split", help="deterministic train/val/test split")
    _add(d, "--gt", required=True, help="annotation JSON")
    _add(d, "--seed", type=int, help="shuffle seed (default: 1)")
    _add(d, "--out", required=True, help="split manifest JSON path")
    _add(d, "--ratios", help="comma-separated ratios (default: 0.82,0.12,0.06)")
    _add(d, "--config", help="JSON config file; flags override it")

    return parser


def merge_config(key: str, provided: dict) -> dict:
    """Precedence: explicit flags > config file > defaults. Unknown keys in
    the config file are a usage error."""
    cfg = dict(DEFAULTS[key])
    path = provided.pop("config", None)
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(file_cfg)
    cfg.update(provided)
    return cfg


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def _scene_from(cfg: dict) -> SceneSpec:
    return SceneSpec(
        seed=cfg["seed"],
        tool_count=cfg["tools"],
        width=cfg["width"],
        height=cfg["height"],
        translate_px=cfg.get("translate_px", 0),
        confidence_floor=cfg.get("confidence_floor", 1.0),
    )


def cmd_serve(cfg: dict) -> int:
    if cfg["backend"] == "oracle":
        provider = OracleProvider(_scene_from(cfg))
    else:
        if not cfg["annotations"]:
            raise UsageError("replay backend requires --annotations")
        latency = int(cfg["inference_ms"] * 1000) if cfg["inference_ms"] else None
        provider = ReplayProvider(AnnotationSet.load(cfg["annotations"]), latency_us=latency)
    server = Server(provider, cfg["host"], cfg["port"], cfg["threshold"])
    port = server.start()
    print(f"listening on {cfg['host']}:{port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _run_config(cfg: dict, out_dir) -> RunConfig:
    host, _, port = cfg["endpoint"].rpartition(":")
    return RunConfig(
        source=cfg["source"],
        backend=cfg["backend"],
        scene=_scene_from(cfg) if cfg["source"] == "synthetic" else None,
        input_path=Path(cfg["input"]) if cfg["input"] else None,
        images_dir=Path(cfg["images_dir"]) if cfg["images_dir"] else None,
        endpoint=(host, int(port)),
        style=resolve_style(cfg["style"]),
        stereo=StereoConfig(cfg["focal"], cfg["baseline"]) if cfg["stereo"] else None,
        mode=cfg["mode"],
        drop_policy=cfg["drop_policy"],
        frame_count=cfg["frames"],
        out_dir=out_dir,
        confidence_threshold=cfg["threshold"],
        inference_latency_us=int(cfg["inference_ms"] * 1000) if cfg["inference_ms"] else None,
        result_timeout_s=cfg["timeout"],
    )


def cmd_run(cfg: dict) -> int:
    out_dir = Path(cfg["out"])
    result = run(_run_config(cfg, out_dir))
    result.report.save(out_dir / "report.json")
    print(result.report.render())
    print(f"wrote {result.frames_presented} frames to {out_dir}")
    if result.error:
        log.error("aborted: %s", result.error)
        return 2
    return 0


def cmd_profile(cfg: dict) -> int:
    result = run(_run_config(cfg, None))
    print(result.report.render())
    if cfg["report"]:
        result.report.save(cfg["report"])
    if result.error:
        log.error("aborted: %s", result.error)
        return 2
    return 0


def cmd_eval(cfg: dict) -> int:
    report = evaluate(cfg["pred"], cfg["gt"], max_dets=cfg["max_dets"], model=cfg["model"])
    print(render_table([(report.model, report.map_, report.ap50, report.ap75)]))
    if cfg["out"]:
        report.save(cfg["out"])
    return 0


def cmd_dataset_filter(cfg: dict) -> int:
    annotations = AnnotationSet.load(cfg["gt"])
    with_anns = {a.image_id for a in annotations.annotations}
    ids = sorted(im.image_id for im in annotations.images)
    kept = filter_frames(ids, lambda fid: fid in with_anns, skip=cfg["skip"])
    payload = {"kept_frames": kept, "skip": cfg["skip"]}
    if cfg["out"]:
        Path(cfg["out"]).write_text(json.dumps(payload, indent=1) + "\n")
    print(f"kept {len(kept)} of {len(ids)} frames")
    return 0


def cmd_dataset_augment(cfg: dict) -> int:
    annotations = AnnotationSet.load(cfg["gt"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    images_dir = Path(cfg["images"])

    new_images = []
    new_annotations = []
    next_image_id = max((im.image_id for im in annotations.images), default=0) + 1
    next_ann_id = max((a.annotation_id for a in annotations.annotations), default=0) + 1

    for im in sorted(annotations.images, key=lambda i: i.image_id):
        pixels = read_png(images_dir / im.file_name)
        anns = annotations.by_image(im.image_id)
        if cfg["keep_originals"]:
            write_png(out_dir / im.file_name, pixels)
            new_images.append(im)
            new_annotations.extend(anns)
        for copy in range(cfg["copies"]):
            params = AugmentParams(
                seed=per_image_seed(mix64(cfg["seed"] + copy), im.image_id),
                crop_zoom=cfg["max_zoom"],
                rotation_deg=cfg["max_rotation"],
                brightness=cfg["max_brightness"],
                blur_sigma=cfg["max_blur"],
                noise_frac=cfg["max_noise"],
            )
            aug_pixels, aug_anns, _ = augment(pixels, anns, params)
            stem = Path(im.file_name).stem
            name = f"{stem}_aug{copy}.png"
            write_png(out_dir / name, aug_pixels)
            new_im = ImageInfo(next_image_id, name, im.width, im.height)
            next_image_id += 1
            new_images.append(new_im)
            for ann in aug_anns:
                new_annotations.append(
                    Annotation(next_ann_id, new_im.image_id, ann.class_id, ann.shape, ann.score)
                )
                next_ann_id += 1

    out_set = AnnotationSet(new_images, new_annotations, annotations.taxonomy)
    out_set.save(out_dir / "annotations.json")
    print(f"wrote {len(new_images)} images, {len(new_annotations)} annotations to {out_dir}")
    return 0


def cmd_dataset_resize(cfg: dict) -> int:
    annotations = AnnotationSet.load(cfg["gt"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    target = (cfg["width"], cfg["height"])
    new_images = []
    new_annotations = []
    for im in sorted(annotations.images, key=lambda i: i.image_id):
        pixels = read_png(Path(cfg["images"]) / im.file_name)
        resized, anns = normalize_resolution(pixels, annotations.by_image(im.image_id), target)
        write_png(out_dir / im.file_name, resized)
        new_images.append(ImageInfo(im.image_id, im.file_name, target[0], target[1]))
        new_annotations.extend(anns)
    AnnotationSet(new_images, new_annotations, annotations.taxonomy).save(
        out_dir / "annotations.json"
    )
    print(f"resized {len(new_images)} images to {target[0]}x{target[1]}")
    return 0


def cmd_dataset_split(cfg: dict) -> int:
    annotations = AnnotationSet.load(cfg["gt"])
    ratios = tuple(float(r) for r in cfg["ratios"].split(","))
    if len(ratios) != 3:
        raise UsageError("--ratios needs exactly three comma-separated values")
    ids = sorted(im.image_id for im in annotations.images)
    train, val, test = split(ids, SplitSpec(seed=cfg["seed"], ratios=ratios))
    manifest = {"train": train, "val": val, "test": test, "seed": cfg["seed"]}
    Path(cfg["out"]).write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"split {len(ids)} ids into {len(train)}/{len(val)}/{len(test)}")
    return 0


_HANDLERS = {
    "serve": cmd_serve,
    "run": cmd_run,
    "profile": cmd_profile,
    "eval": cmd_eval,
    "dataset.filter": cmd_dataset_filter,
    "dataset.augment": cmd_dataset_augment,
    "dataset.resize": cmd_dataset_resize,
    "dataset.split": cmd_dataset_split,
}

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("COOKAR_LOG", "warn").lower(), logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("cookar")
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    provided = {k: v for k, v in vars(ns).items() if k not in ("command", "action")}
    key = ns.command if ns.command != "dataset" else f"dataset.{ns.action}"
    try:
        cfg = merge_config(key, provided)
        return _HANDLERS[key](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 0
    except Exception as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
