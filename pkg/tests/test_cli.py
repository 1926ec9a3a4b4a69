import json
from pathlib import Path

import numpy as np
import pytest

from cookar.annotations import Annotation, AnnotationSet, ImageInfo
from cookar.cli import main
from cookar.imageio import read_png, write_png

from conftest import predictions_like, square


def run_cli(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


@pytest.fixture
def gt_file(tmp_path, simple_gt):
    path = tmp_path / "gt.json"
    simple_gt.save(path)
    return path


@pytest.fixture
def pred_file(tmp_path, simple_gt):
    path = tmp_path / "pred.json"
    predictions_like(simple_gt, score=1.0).save(path)
    return path


class TestEvalCommand:
    def test_self_evaluation_scores_one(self, capsys, gt_file, pred_file, tmp_path):
        out_path = tmp_path / "report.json"
        rc, out, _ = run_cli(
            capsys, "eval", "--pred", str(pred_file), "--gt", str(gt_file),
            "--out", str(out_path), "--model", "self",
        )
        assert rc == 0
        assert "self" in out and "| 1.000 | 1.000 | 1.000" in out
        data = json.loads(out_path.read_text())
        assert data["mAP"] == 1.0

    def test_same_file_both_sides_scores_one(self, capsys, pred_file):
        rc, out, _ = run_cli(
            capsys, "eval", "--pred", str(pred_file), "--gt", str(pred_file)
        )
        assert rc == 0
        assert "| 1.000 | 1.000 | 1.000" in out

    def test_missing_file_is_runtime_error(self, capsys, gt_file):
        rc, _, err = run_cli(capsys, "eval", "--pred", "missing.json", "--gt", str(gt_file))
        assert rc == 2
        assert "error" in err.lower()


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        rc, _, err = run_cli(capsys, "bogus")
        assert rc == 1

    def test_unknown_flag(self, capsys):
        rc, _, err = run_cli(capsys, "eval", "--nope", "x")
        assert rc == 1
        assert "usage error" in err

    def test_missing_required_flag(self, capsys):
        rc, _, _ = run_cli(capsys, "eval", "--pred", "p.json")
        assert rc == 1

    @pytest.mark.parametrize(
        "argv",
        [
            ("--help",),
            ("serve", "--help"),
            ("run", "--help"),
            ("profile", "--help"),
            ("eval", "--help"),
            ("dataset", "--help"),
            ("dataset", "augment", "--help"),
        ],
    )
    def test_help_exits_zero(self, capsys, argv):
        rc, out, _ = run_cli(capsys, *argv)
        assert rc == 0

    def test_help_documents_defaults(self, capsys):
        rc, out, _ = run_cli(capsys, "serve", "--help")
        assert rc == 0 and "0.4" in out
        rc, out, _ = run_cli(capsys, "eval", "--help")
        assert rc == 0 and "0.50" in out and "0.95" in out
        rc, out, _ = run_cli(capsys, "run", "--help")
        assert rc == 0 and "#3BE8B0" in out and "#FC626A" in out


class TestConfigFile:
    def test_precedence_flags_over_file_over_defaults(self, capsys, tmp_path, gt_file):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"skip": 10, "out": str(tmp_path / "from_file.json")}))
        out_flag = tmp_path / "kept.json"
        rc, _, _ = run_cli(
            capsys, "dataset", "filter", "--gt", str(gt_file),
            "--config", str(cfg), "--out", str(out_flag),
        )
        assert rc == 0
        data = json.loads(out_flag.read_text())  # flag out wins over file out
        assert data["skip"] == 10  # file value beats the default 20
        assert not (tmp_path / "from_file.json").exists()

    def test_unknown_config_key_rejected(self, capsys, tmp_path, gt_file):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"skipp": 10}))
        rc, _, err = run_cli(
            capsys, "dataset", "filter", "--gt", str(gt_file), "--config", str(cfg)
        )
        assert rc == 1
        assert "skipp" in err


class TestDatasetCommands:
    def test_filter(self, capsys, tmp_path, gt_file):
        out = tmp_path / "kept.json"
        rc, _, _ = run_cli(
            capsys, "dataset", "filter", "--gt", str(gt_file), "--out", str(out)
        )
        assert rc == 0
        data = json.loads(out.read_text())
        assert data["kept_frames"] == [1]  # image 2 is within the skip window
        assert data["skip"] == 20

    def test_split_manifest_schema(self, capsys, tmp_path):
        images = [ImageInfo(i, f"{i}.png", 64, 64) for i in range(100)]
        anns = [Annotation(i, i, 0, square(1, 1, 10)) for i in range(100)]
        gt = AnnotationSet(images=images, annotations=anns)
        gt_path = tmp_path / "gt.json"
        gt.save(gt_path)
        out = tmp_path / "manifest.json"
        rc, _, _ = run_cli(
            capsys, "dataset", "split", "--gt", str(gt_path), "--seed", "3", "--out", str(out)
        )
        assert rc == 0
        manifest = json.loads(out.read_text())
        assert set(manifest) == {"train", "val", "test", "seed"}
        assert manifest["seed"] == 3
        assert (len(manifest["train"]), len(manifest["val"]), len(manifest["test"])) == (82, 12, 6)

    def test_split_reproducible(self, capsys, tmp_path):
        images = [ImageInfo(i, f"{i}.png", 64, 64) for i in range(50)]
        anns = [Annotation(i, i, 0, square(1, 1, 10)) for i in range(50)]
        AnnotationSet(images=images, annotations=anns).save(tmp_path / "gt.json")
        outs = []
        for name in ("a.json", "b.json"):
            rc, _, _ = run_cli(
                capsys, "dataset", "split", "--gt", str(tmp_path / "gt.json"),
                "--seed", "9", "--out", str(tmp_path / name),
            )
            assert rc == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def _image_set(self, tmp_path, n=2, w=96, h=72):
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        images, anns = [], []
        rng = np.random.default_rng(5)
        for i in range(1, n + 1):
            pixels = rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)
            write_png(img_dir / f"im{i}.png", pixels)
            images.append(ImageInfo(i, f"im{i}.png", w, h))
            anns.append(Annotation(i, i, 0, square(10, 10, 40)))
        gt = AnnotationSet(images=images, annotations=anns)
        gt_path = tmp_path / "gt.json"
        gt.save(gt_path)
        return img_dir, gt_path

    def test_augment_reproducible_and_annotated(self, capsys, tmp_path):
        img_dir, gt_path = self._image_set(tmp_path)
        outputs = []
        for name in ("out_a", "out_b"):
            out_dir = tmp_path / name
            rc, _, _ = run_cli(
                capsys, "dataset", "augment", "--images", str(img_dir),
                "--gt", str(gt_path), "--out", str(out_dir), "--seed", "11",
            )
            assert rc == 0
            files = sorted(p.name for p in out_dir.iterdir())
            outputs.append({f: (out_dir / f).read_bytes() for f in files})
        assert outputs[0] == outputs[1]  # byte-identical across runs
        out_set = AnnotationSet.load(tmp_path / "out_a" / "annotations.json")
        assert len(out_set.images) == 2
        assert all(im.file_name.endswith("_aug0.png") for im in out_set.images)

    def test_resize(self, capsys, tmp_path):
        img_dir, gt_path = self._image_set(tmp_path, n=1, w=1280, h=960)
        out_dir = tmp_path / "resized"
        rc, _, _ = run_cli(
            capsys, "dataset", "resize", "--images", str(img_dir),
            "--gt", str(gt_path), "--out", str(out_dir),
        )
        assert rc == 0
        out_img = read_png(out_dir / "im1.png")
        assert out_img.shape == (480, 640, 3)
        out_set = AnnotationSet.load(out_dir / "annotations.json")
        assert out_set.images[0].width == 640
        assert out_set.annotations[0].shape.rings[0][0] == (5.0, 5.0)


class TestServeAndRun:
    def test_serve_prints_port_and_answers(self, capsys):
        import subprocess
        import sys

        proc = subprocess.Popen(
            [sys.executable, "-m", "cookar.cli", "serve", "--backend", "oracle",
             "--port", "0", "--seed", "3"],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            env={"PYTHONPATH": str(Path(__file__).resolve().parent.parent / "src"), "PATH": "/usr/bin:/bin"},
        )
        try:
            line = proc.stdout.readline()
            assert "listening on 127.0.0.1:" in line
            port = int(line.strip().rsplit(":", 1)[1])
            assert port > 0
            from cookar.backends import RemoteClient, SceneSpec, oracle_segment

            with RemoteClient("127.0.0.1", port, timeout_s=5.0) as client:
                from test_backends import blank_frame

                out = client.segment(blank_frame(0))
            assert out == oracle_segment(SceneSpec(seed=3, tool_count=3), 0)
        finally:
            proc.terminate()
            proc.wait(timeout=5)

    def test_run_end_to_end_loopback(self, capsys, tmp_path):
        from cookar.backends import OracleProvider, SceneSpec, Server

        spec = SceneSpec(seed=5, tool_count=2)
        out_dir = tmp_path / "frames"
        with Server(OracleProvider(spec), port=0) as server:
            rc, out, _ = run_cli(
                capsys, "run", "--source", "synthetic", "--backend", "remote",
                "--endpoint", f"127.0.0.1:{server.port}", "--style", "preferred",
                "--mode", "serial", "--seed", "5", "--tools", "2",
                "--frames", "6", "--out", str(out_dir),
            )
        assert rc == 0
        assert (out_dir / "report.json").exists()
        pngs = sorted(out_dir.glob("frame_*.png"))
        assert len(pngs) == 6
        report = json.loads((out_dir / "report.json").read_text())
        assert report["frames"] == 6 and report["drops"] == 0

    def test_run_frames_reproducible(self, capsys, tmp_path):
        hashes = []
        for name in ("r1", "r2"):
            out_dir = tmp_path / name
            rc, _, _ = run_cli(
                capsys, "run", "--source", "synthetic", "--backend", "inproc",
                "--seed", "4", "--tools", "1", "--frames", "2", "--out", str(out_dir),
            )
            assert rc == 0
            hashes.append([
                (out_dir / f"frame_{i:06}.png").read_bytes() for i in range(2)
            ])
        assert hashes[0] == hashes[1]

    def test_profile_emits_report_only(self, capsys, tmp_path):
        report_path = tmp_path / "lat.json"
        rc, out, _ = run_cli(
            capsys, "profile", "--source", "synthetic", "--seed", "2", "--tools", "1",
            "--frames", "3", "--report", str(report_path),
        )
        assert rc == 0
        assert "end-to-end" in out
        assert not list(tmp_path.glob("*.png"))
        data = json.loads(report_path.read_text())
        assert data["frames"] == 3
