"""Multi-seed comparison of distillation variants on a held-out split."""

import json
import logging
from pathlib import Path

import numpy as np

from uwkit.data.corpus import Corpus, load_corpus
from uwkit.data.dataset import split_items
from uwkit.models.schemas import RunConfig
from uwkit.models.service_dataclasses import BenchmarkResult, VariantScores
from uwkit.services.evaluation_service import EvaluationService
from uwkit.services.training_service import TrainingService

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_HOLDOUT = 0.25
REPORT_FILE = "benchmark.json"


def variant_configs(config: RunConfig) -> dict[str, RunConfig]:
    """Student variants trained against the same teacher."""
    distill = config.distill
    head = config.head
    return {
        "mgukd": config.model_copy(update={"distill": distill.model_copy(update={"method": "mgukd"})}),
        "no_distill": config.model_copy(update={"distill": distill.model_copy(update={"method": "mgukd", "alpha": 0.0})}),
        "mse": config.model_copy(update={"distill": distill.model_copy(update={"method": "mse"})}),
        "no_channel_attention": config.model_copy(update={
            "distill": distill.model_copy(update={"method": "mgukd"}),
            "head": head.model_copy(update={"channel_attention": False}),
        }),
    }


def _median(values: list[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return float(np.median(finite)) if finite else float("nan")


def _spread(values: list[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return float(max(finite) - min(finite)) if finite else 0.0


def directional_checks(medians: dict[str, dict[str, float]], scores: dict[str, VariantScores]) -> dict[str, float | bool]:
    """Variant comparisons over the seed medians.

    ``noise_band`` is the widest per-seed spread of mAP^s among the students;
    mAP directions are judged against it, feature alignment strictly.
    """
    segm = {name: m["segm_map"] for name, m in medians.items()}
    alignment = {name: m.get("feature_alignment", float("nan")) for name, m in medians.items()}
    noise_band = max((_spread(s.segm_map) for name, s in scores.items() if name != "teacher"), default=0.0)
    distill_gain = segm["mgukd"] - segm["no_distill"]
    removal_gain = segm["no_channel_attention"] - segm["mgukd"]
    return {
        "noise_band": noise_band,
        "distill_map_gain": distill_gain,
        "distill_map_not_below_control": bool(distill_gain >= 0.0),
        "distill_alignment_below_control": bool(alignment["mgukd"] < alignment["no_distill"]),
        "mgukd_minus_mse_map": segm["mgukd"] - segm["mse"],
        "mgukd_minus_mse_alignment": alignment["mgukd"] - alignment["mse"],
        "channel_attention_removal_gain": removal_gain,
        "channel_attention_removal_within_noise": bool(removal_gain <= noise_band),
    }


class BenchmarkService:
    """Service for the teacher / student variant comparison.

    Per seed: train a teacher, then each student variant against it, and
    evaluate everything on the held-out images. Medians over seeds are reported.
    """

    def __init__(self, config: RunConfig, out_dir: Path, seeds: tuple[int, ...] = DEFAULT_SEEDS):
        if config.data.holdout_fraction <= 0.0:
            logger.info(f"No holdout configured; holding out {DEFAULT_HOLDOUT:.0%} of the corpus")
            config = config.model_copy(update={"data": config.data.model_copy(update={"holdout_fraction": DEFAULT_HOLDOUT})})
        self.config = config
        self.out_dir = Path(out_dir)
        self.seeds = tuple(seeds)

    def _run_seed(self, seed: int, scores: dict[str, VariantScores]):
        config = self.config.model_copy(update={"seed": seed})
        corpus: Corpus = load_corpus(config.data, seed)
        train, holdout = split_items(corpus.items, config.data.holdout_fraction)
        seed_dir = self.out_dir / f"seed_{seed}"

        teacher = TrainingService(config, seed_dir / "teacher", corpus=corpus).train_teacher()
        result = EvaluationService.evaluate(Path(teacher.checkpoint), corpus, holdout)
        scores["teacher"].segm_map.append(result.segm_map)
        scores["teacher"].bbox_map.append(result.bbox_map)

        for name, variant in variant_configs(config).items():
            summary = TrainingService(variant, seed_dir / name, corpus=corpus).distill(Path(teacher.checkpoint))
            result = EvaluationService.evaluate(Path(summary.checkpoint), corpus, holdout)
            scores[name].segm_map.append(result.segm_map)
            scores[name].bbox_map.append(result.bbox_map)
            scores[name].feature_alignment.append(
                EvaluationService.feature_alignment(Path(teacher.checkpoint), Path(summary.checkpoint), holdout,
                                                  fit_items=train)
            )
            logger.info(f"seed {seed} {name}: mAP^s={result.segm_map:.4f}")

    def run(self) -> BenchmarkResult:
        names = ["teacher", *variant_configs(self.config)]
        scores = {name: VariantScores(name) for name in names}
        for seed in self.seeds:
            self._run_seed(seed, scores)

        variants = {
            name: {
                "segm_map": _median(s.segm_map),
                "bbox_map": _median(s.bbox_map),
                **({"feature_alignment": _median(s.feature_alignment)} if s.feature_alignment else {}),
            }
            for name, s in scores.items()
        }
        checks = directional_checks(variants, scores)
        result = BenchmarkResult(output_dir=str(self.out_dir), seeds=list(self.seeds), variants=variants, checks=checks)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        report = {
            "seeds": result.seeds,
            "medians": variants,
            "checks": checks,
            "per_seed": {name: {"segm_map": s.segm_map, "bbox_map": s.bbox_map,
                                "feature_alignment": s.feature_alignment} for name, s in scores.items()},
        }
        (self.out_dir / REPORT_FILE).write_text(json.dumps(report, indent=2, sort_keys=True))
        logger.info(f"Wrote benchmark report to {self.out_dir / REPORT_FILE}")
        return result
