"""Tests for checkpoint evaluation, feature alignment and benchmark variants."""

import json
import math

import numpy as np
import pytest

from uwkit.data.corpus import Corpus
from uwkit.exceptions import ConfigError
from uwkit.models.service_dataclasses import VariantScores
from uwkit.services.benchmark_service import (
    DEFAULT_HOLDOUT,
    REPORT_FILE,
    BenchmarkService,
    directional_checks,
    variant_configs,
)
from uwkit.services.evaluation_service import EvaluationService
from uwkit.services.training_service import LAST_CHECKPOINT, TrainingService
from uwkit.utils.config import load_run_config


class TestEvaluate:
    def test_metrics_in_range(self, corpus, teacher_checkpoint, tmp_path):
        result = EvaluationService.evaluate(teacher_checkpoint, corpus, out_path=tmp_path / "eval" / "eval.json")
        assert result.num_images == 4
        assert result.num_parameters > result.encoder_parameters > 0
        for value in (result.bbox_map, result.bbox_ap50, result.segm_map, result.segm_ap50):
            assert math.isnan(value) or 0.0 <= value <= 1.0
        assert math.isnan(result.segm_apl)
        written = json.loads((tmp_path / "eval" / "eval.json").read_text())
        assert written["num_images"] == 4
        assert isinstance(json.loads((tmp_path / "eval" / "results.json").read_text()), list)

    def test_category_count_mismatch(self, tiny_items, teacher_checkpoint):
        corpus = Corpus(tiny_items, ["fish", "coral", "plant"], [1, 2, 3], "synthetic")
        with pytest.raises(ConfigError, match="categories"):
            EvaluationService.evaluate(teacher_checkpoint, corpus)


class TestFeatureAlignment:
    def test_student_alignment_finite(self, tiny_config, corpus, teacher_checkpoint, tmp_path):
        config = tiny_config.model_copy(update={"optim": tiny_config.optim.model_copy(update={"max_steps": 1})})
        TrainingService(config, tmp_path / "student", corpus).distill(teacher_checkpoint)
        value = EvaluationService.feature_alignment(teacher_checkpoint, tmp_path / "student" / LAST_CHECKPOINT,
                                                    corpus.items)
        assert math.isfinite(value)
        assert value >= 0.0

    def test_ignores_the_students_own_head(self, tiny_config, corpus, teacher_checkpoint, tmp_path):
        values = []
        for name, distill in (("zero", {"alpha": 0.0}), ("none", {"method": "none"})):
            config = load_run_config(overrides={"distill": distill, "optim": {"max_steps": 1}},
                                     base=tiny_config.model_dump(mode="json"))
            TrainingService(config, tmp_path / name, corpus).distill(teacher_checkpoint)
            values.append(EvaluationService.feature_alignment(teacher_checkpoint, tmp_path / name / LAST_CHECKPOINT,
                                                              corpus.items, steps=5))
        assert values[0] == values[1]

    def test_fitting_reduces_error(self, tiny_config, corpus, teacher_checkpoint, tmp_path):
        config = tiny_config.model_copy(update={"optim": tiny_config.optim.model_copy(update={"max_steps": 1})})
        TrainingService(config, tmp_path / "student", corpus).distill(teacher_checkpoint)
        student = tmp_path / "student" / LAST_CHECKPOINT
        unfitted = EvaluationService.feature_alignment(teacher_checkpoint, student, corpus.items, steps=0)
        fitted = EvaluationService.feature_alignment(teacher_checkpoint, student, corpus.items, steps=50)
        assert fitted < unfitted

    def test_empty_items(self, tiny_config, corpus, teacher_checkpoint, tmp_path):
        config = tiny_config.model_copy(update={"optim": tiny_config.optim.model_copy(update={"max_steps": 1})})
        TrainingService(config, tmp_path / "student", corpus).distill(teacher_checkpoint)
        assert math.isnan(EvaluationService.feature_alignment(teacher_checkpoint, tmp_path / "student" / LAST_CHECKPOINT, []))


class TestBenchmarkVariants:
    def test_variants(self, tiny_config):
        variants = variant_configs(tiny_config)
        assert set(variants) == {"mgukd", "no_distill", "mse", "no_channel_attention"}
        assert variants["no_distill"].distill.alpha == 0.0
        assert variants["mse"].distill.method == "mse"
        assert variants["no_channel_attention"].head.channel_attention is False
        assert variants["mgukd"].head == tiny_config.head

    def test_default_holdout(self, tiny_config, tmp_path):
        service = BenchmarkService(tiny_config, tmp_path, seeds=(0,))
        assert service.config.data.holdout_fraction == DEFAULT_HOLDOUT


class TestDirectionalChecks:
    def _scores(self, per_seed: dict[str, list[float]]) -> dict[str, VariantScores]:
        return {name: VariantScores(name, segm_map=values) for name, values in per_seed.items()}

    def test_orderings(self):
        per_seed = {
            "teacher": [0.9, 0.1, 0.5],
            "mgukd": [0.30, 0.40, 0.35],
            "no_distill": [0.20, 0.30, 0.25],
            "mse": [0.32, 0.30, 0.31],
            "no_channel_attention": [0.36, 0.34, 0.50],
        }
        medians = {name: {"segm_map": float(np.median(v))} for name, v in per_seed.items()}
        for name, value in (("mgukd", 0.1), ("no_distill", 0.4), ("mse", 0.2)):
            medians[name]["feature_alignment"] = value
        checks = directional_checks(medians, self._scores(per_seed))
        assert checks["noise_band"] == pytest.approx(0.16)
        assert checks["distill_map_gain"] == pytest.approx(0.10)
        assert checks["distill_map_not_below_control"] is True
        assert checks["distill_alignment_below_control"] is True
        assert checks["mgukd_minus_mse_map"] == pytest.approx(0.04)
        assert checks["mgukd_minus_mse_alignment"] == pytest.approx(-0.1)
        assert checks["channel_attention_removal_gain"] == pytest.approx(0.01)
        assert checks["channel_attention_removal_within_noise"] is True

    def test_missing_alignment_fails_the_strict_check(self):
        per_seed = {name: [0.0] for name in ("mgukd", "no_distill", "mse", "no_channel_attention")}
        medians = {name: {"segm_map": 0.0} for name in per_seed}
        checks = directional_checks(medians, self._scores(per_seed))
        assert checks["noise_band"] == 0.0
        assert checks["distill_map_not_below_control"] is True
        assert checks["distill_alignment_below_control"] is False
        assert checks["channel_attention_removal_within_noise"] is True


@pytest.mark.slow
class TestBenchmarkRun:
    def test_variant_ordering(self, tiny_config, tmp_path):
        config = load_run_config(
            overrides={"data": {"num_images": 16}, "distill": {"alpha": 1.0},
                       "optim": {"epochs": 10, "max_steps": 60, "lr": 1e-3, "log_every": 60}},
            base=tiny_config.model_dump(mode="json"),
        )
        result = BenchmarkService(config, tmp_path / "benchmark", seeds=(0, 1, 2)).run()
        assert result.seeds == [0, 1, 2]
        assert set(result.variants) == {"teacher", "mgukd", "no_distill", "mse", "no_channel_attention"}
        report = json.loads((tmp_path / "benchmark" / REPORT_FILE).read_text())
        assert len(report["per_seed"]["mgukd"]["feature_alignment"]) == 3

        checks = result.checks
        assert checks["distill_alignment_below_control"]
        assert checks["distill_map_gain"] >= -checks["noise_band"]
        assert checks["channel_attention_removal_within_noise"]
        assert math.isfinite(checks["mgukd_minus_mse_alignment"])
