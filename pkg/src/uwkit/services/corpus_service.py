"""Corpus generation and statistics."""

import json
import logging
from pathlib import Path

from uwkit.data.corpus import Corpus, write_corpus
from uwkit.data.synth import synthesize
from uwkit.metrics.dataset_stats import dataset_stats, plot_stats
from uwkit.models.schemas import SceneConfig
from uwkit.models.service_dataclasses import DatasetStats, SynthResult

logger = logging.getLogger(__name__)

STATS_FILE = "stats.json"


class CorpusService:
    """Service for synthetic corpus and dataset statistics operations."""

    @staticmethod
    def synth(out_dir: Path, num_images: int, seed: int, config: SceneConfig, force: bool = False) -> SynthResult:
        scenes = synthesize(num_images, seed, config)
        write_corpus(out_dir, scenes, config, seed, force=force)
        return SynthResult(
            output_dir=str(out_dir),
            num_images=len(scenes),
            num_instances=sum(len(item.instances) for _, item in scenes),
            seed=seed,
        )

    @staticmethod
    def stats(corpus: Corpus, out_dir: Path | None = None, plots: bool = False, bins: int = 64) -> DatasetStats:
        stats = dataset_stats(corpus.items, corpus.category_names, bins=bins)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / STATS_FILE).write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
            logger.info(f"Wrote statistics to {out_dir / STATS_FILE}")
            if plots:
                plot_stats(stats, out_dir)
        return stats
