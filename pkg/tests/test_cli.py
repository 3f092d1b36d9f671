"""Tests for the uwkit command line."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from uwkit.cli import main
from uwkit.data.coco import decode_segmentation
from uwkit.utils.image_utils import instance_palette, load_image


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tiny_config, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(tiny_config.model_dump_json())
    return path


def _invoke(runner, *args):
    return runner.invoke(main, [*map(str, args)], catch_exceptions=False)


def _synth(runner, config_file, out, *extra):
    return _invoke(runner, "synth", "--config", config_file, "--out", out, "--log-level", "ERROR", *extra)


@pytest.fixture
def trained(runner, config_file, tmp_path):
    corpus = tmp_path / "corpus"
    assert _synth(runner, config_file, corpus).exit_code == 0
    result = _invoke(runner, "train-teacher", "--config", config_file, "--corpus", corpus,
                     "--out", tmp_path / "run", "--max-steps", 1, "--log-level", "ERROR")
    assert result.exit_code == 0, result.output
    return corpus, tmp_path / "run" / "last.ckpt"


class TestSynth:
    def test_deterministic(self, runner, config_file, tmp_path):
        for name in ("a", "b"):
            result = _synth(runner, config_file, tmp_path / name, "--seed", 5)
            assert result.exit_code == 0, result.output
            assert "✓ Wrote 4 images" in result.output
        a = (tmp_path / "a" / "annotations.json").read_bytes()
        b = (tmp_path / "b" / "annotations.json").read_bytes()
        assert a == b
        assert sorted(p.name for p in (tmp_path / "a" / "images").iterdir()) == [f"{i:06d}.png" for i in range(4)]

    def test_zero_images(self, runner, config_file, tmp_path):
        result = _synth(runner, config_file, tmp_path / "empty", "--num-images", 0)
        assert result.exit_code == 0, result.output
        document = json.loads((tmp_path / "empty" / "annotations.json").read_text())
        assert document["images"] == []
        assert document["annotations"] == []

    def test_refuses_non_empty_directory(self, runner, config_file, tmp_path):
        out = tmp_path / "corpus"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        result = _synth(runner, config_file, out)
        assert result.exit_code == 1
        assert "Error:" in result.output
        assert _synth(runner, config_file, out, "--force").exit_code == 0

    def test_rejects_unknown_config_key(self, runner, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"bogus": 1}))
        result = _synth(runner, path, tmp_path / "out")
        assert result.exit_code == 1
        assert "Invalid run configuration" in result.output


class TestTrainedModel:
    def test_eval_prints_metrics(self, runner, trained, tmp_path):
        corpus, checkpoint = trained
        result = _invoke(runner, "eval", "--checkpoint", checkpoint, "--corpus", corpus,
                         "--out", tmp_path / "eval", "--log-level", "ERROR")
        assert result.exit_code == 0, result.output
        metrics = json.loads(result.stdout)
        assert metrics["num_images"] == 4
        for key in ("bbox_map", "bbox_ap50", "segm_map", "segm_ap50"):
            assert key in metrics
        assert (tmp_path / "eval" / "eval.json").exists()
        assert (tmp_path / "eval" / "results.json").exists()

    def test_eval_refuses_non_empty_output(self, runner, trained, tmp_path):
        corpus, checkpoint = trained
        out = tmp_path / "eval"
        out.mkdir()
        (out / "eval.json").write_text("{}")
        args = ("eval", "--checkpoint", checkpoint, "--corpus", corpus, "--out", out, "--log-level", "ERROR")
        result = _invoke(runner, *args)
        assert result.exit_code == 1
        assert "--force" in result.output
        assert (out / "eval.json").read_text() == "{}"
        assert _invoke(runner, *args, "--force").exit_code == 0
        assert json.loads((out / "eval.json").read_text())["num_images"] == 4

    def test_infer_writes_outputs(self, runner, trained, tmp_path):
        corpus, checkpoint = trained
        out = tmp_path / "predictions"
        result = _invoke(runner, "infer", corpus / "images" / "000000.png", "--checkpoint", checkpoint,
                         "--out", out, "--score-threshold", 0.0, "--log-level", "ERROR")
        assert result.exit_code == 0, result.output
        assert "detections in" in result.output
        assert (out / "000000_results.json").exists()
        assert (out / "000000_overlay.png").exists()

    def test_infer_overlay_covers_predicted_masks(self, runner, trained, tmp_path):
        corpus, checkpoint = trained
        image_path = corpus / "images" / "000000.png"
        out = tmp_path / "predictions"
        result = _invoke(runner, "infer", image_path, "--checkpoint", checkpoint, "--out", out,
                         "--score-threshold", 0.0, "--log-level", "ERROR")
        assert result.exit_code == 0, result.output
        image = load_image(image_path)
        overlay = load_image(out / "000000_overlay.png")
        assert overlay.shape == image.shape
        h, w = image.shape[:2]
        results = json.loads((out / "000000_results.json").read_text())
        masks = [decode_segmentation(r["segmentation"], h, w) for r in results]
        union = np.zeros((h, w), dtype=bool)
        top_color = np.zeros_like(image)
        for mask, color in zip(masks, instance_palette(len(masks))):
            union |= mask
            top_color[mask] = color
        changed = (overlay != image).any(axis=-1)
        # A blend only survives 8-bit rounding where the color differs from the pixel.
        indistinct = np.abs(top_color - image).max(axis=-1) < 2.0 / 255.0
        assert not changed[~union].any()
        assert changed[union & ~indistinct].all()

    def test_infer_missing_image(self, runner, trained, tmp_path):
        _, checkpoint = trained
        result = _invoke(runner, "infer", tmp_path / "nope.png", "--checkpoint", checkpoint, "--log-level", "ERROR")
        assert result.exit_code == 1
        assert "Error:" in result.output

    def test_eval_missing_checkpoint(self, runner, tmp_path):
        result = _invoke(runner, "eval", "--checkpoint", tmp_path / "missing.ckpt", "--log-level", "ERROR")
        assert result.exit_code == 1
        assert "Checkpoint not found" in result.output

    def test_stats(self, runner, trained, tmp_path):
        corpus, _ = trained
        result = _invoke(runner, "stats", "--corpus", corpus, "--out", tmp_path / "stats", "--log-level", "ERROR")
        assert result.exit_code == 0, result.output
        assert "Dataset Statistics" in result.output
        assert "Images: 4" in result.output
        assert (tmp_path / "stats" / "stats.json").exists()

    def test_stats_refuses_non_empty_output(self, runner, trained, tmp_path):
        corpus, _ = trained
        out = tmp_path / "stats"
        out.mkdir()
        (out / "stats.json").write_text("{}")
        args = ("stats", "--corpus", corpus, "--out", out, "--log-level", "ERROR")
        assert _invoke(runner, *args).exit_code == 1
        assert (out / "stats.json").read_text() == "{}"
        assert _invoke(runner, *args, "--force").exit_code == 0
        assert json.loads((out / "stats.json").read_text())["num_images"] == 4


class TestInfo:
    def test_config_info(self, runner):
        result = _invoke(runner, "config-info")
        assert result.exit_code == 0
        assert "uwkit Configuration" in result.output
        assert "Device:" in result.output

    def test_version(self, runner):
        result = _invoke(runner, "--version")
        assert result.exit_code == 0
        assert "0.1.0" in result.output
