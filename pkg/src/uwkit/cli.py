"""Click CLI for uwkit."""

import functools
import json
import logging
import sys
from pathlib import Path
from textwrap import dedent

import click
import torch

from uwkit.data.corpus import ensure_writable, load_corpus
from uwkit.data.dataset import split_items
from uwkit.exceptions import UwkitError
from uwkit.services import BenchmarkService, CheckpointService, CorpusService, EvaluationService, TrainingService
from uwkit.utils.config import CONFIG, load_run_config
from uwkit.utils.logging import setup_logging


def _setup(log_level: str | None):
    if log_level:
        CONFIG.log_level = log_level
    setup_logging(CONFIG.log_level)
    if CONFIG.num_threads:
        torch.set_num_threads(CONFIG.num_threads)


def _int_list(value: str | None) -> list[int] | None:
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got '{value}'")


def common_options(func):
    """--config, --seed, --out, --force and --log-level."""
    @click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                  help="JSON run configuration (CLI flags override its values)")
    @click.option("--seed", type=int, default=None, help="Global seed (default: from config or 0)")
    @click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory")
    @click.option("--force", is_flag=True, help="Write into a non-empty output directory")
    @click.option("--log-level", default=None, help="Log level (default: from UWKIT_LOG_LEVEL or INFO)")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)
    return wrapper


def _fail(logger: logging.Logger, what: str, error: Exception):
    click.echo(f"Error: {error}", err=True)
    logger.debug(f"{what} failed", exc_info=True)
    sys.exit(1)


@click.group()
@click.version_option(version="0.1.0")
def main():
    """uwkit - underwater instance segmentation with distilled SAM-style models."""
    pass


@main.command()
@common_options
@click.option("--num-images", type=int, default=None, help="Scenes to generate (default: data.num_images)")
def synth(config_path, seed, out, force, log_level, num_images):
    """Generate a synthetic underwater corpus."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        config = load_run_config(config_path, {"seed": seed, "data": {"num_images": num_images}})
        out = out or CONFIG.data_root / "synthetic"
        click.echo(dedent(f"""\
            Generating {config.data.num_images} scenes...
            Seed: {config.seed}
            Output directory: {out}
        """))
        result = CorpusService.synth(out, config.data.num_images, config.seed, config.data.scene, force=force)
        click.echo(f"✓ Wrote {result.num_images} images with {result.num_instances} instances to {result.output_dir}")
    except UwkitError as e:
        _fail(logger, "Synthesis", e)


def _training_config(config_path, seed, out, corpus, epochs, max_steps, extra=None):
    overrides = {
        "seed": seed,
        "output_dir": str(out) if out else None,
        "data": {"corpus": str(corpus) if corpus else None},
        "optim": {"epochs": epochs, "max_steps": max_steps},
    }
    if extra:
        overrides.update(extra)
    return load_run_config(config_path, overrides)


def _summary(summary):
    click.echo(dedent(f"""\
        ✓ Trained {summary.role} for {summary.steps} steps ({summary.epochs} epochs)
          Final loss: {summary.final_loss:.6f}
          Parameters: {summary.num_parameters:,}
          Checkpoint: {summary.checkpoint}
          Log: {summary.log_path}
    """))


def training_options(func):
    @click.option("--corpus", type=click.Path(path_type=Path), default=None, help="Corpus directory (default: data.corpus)")
    @click.option("--epochs", type=int, default=None, help="Training epochs (default: optim.epochs)")
    @click.option("--max-steps", type=int, default=None, help="Stop after this many steps")
    @click.option("--resume", type=click.Path(dir_okay=False, path_type=Path), default=None,
                  help="Continue from a checkpoint of this run")
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)
    return wrapper


@main.command()
@common_options
@training_options
def train_teacher(config_path, seed, out, force, log_level, corpus, epochs, max_steps, resume):
    """Train the teacher model on the task loss."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        config = _training_config(config_path, seed, out, corpus, epochs, max_steps)
        if resume is None:
            ensure_writable(Path(config.output_dir), force)
        _summary(TrainingService(config).train_teacher(resume=resume))
    except UwkitError as e:
        _fail(logger, "Teacher training", e)


@main.command()
@common_options
@training_options
@click.option("--teacher", "teacher_path", type=click.Path(dir_okay=False, path_type=Path), required=True,
              help="Teacher checkpoint")
@click.option("--method", type=click.Choice(["mgukd", "mse", "none"]), default=None, help="Distillation method")
@click.option("--alpha", type=float, default=None, help="Distillation loss weight (default 2e-5)")
@click.option("--mask-ratio", type=float, default=None, help="Share of graph nodes masked (default 0.65)")
@click.option("--k", type=int, default=None, help="Neighbor rank of the similarity threshold (default 11)")
@click.option("--tap-layers", default=None, help="Comma-separated 1-indexed student layers, e.g. 1,2,3,4")
@click.option("--no-channel-attention", is_flag=True, help="Force the channel attention gate to 1")
def distill(config_path, seed, out, force, log_level, corpus, epochs, max_steps, resume, teacher_path,
            method, alpha, mask_ratio, k, tap_layers, no_channel_attention):
    """Distill a student from a frozen teacher."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        extra = {
            "distill": {"method": method, "alpha": alpha, "mask_ratio": mask_ratio, "k": k,
                        "tap_layers": _int_list(tap_layers)},
            "head": {"channel_attention": False if no_channel_attention else None},
        }
        config = _training_config(config_path, seed, out, corpus, epochs, max_steps, extra)
        if resume is None:
            ensure_writable(Path(config.output_dir), force)
        _summary(TrainingService(config).distill(teacher_path, resume=resume))
    except UwkitError as e:
        _fail(logger, "Distillation", e)


@main.command(name="eval")
@common_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="Corpus directory (default: the checkpoint's)")
@click.option("--split", type=click.Choice(["all", "train", "holdout"]), default="all", help="Images to evaluate")
def evaluate(config_path, seed, out, force, log_level, checkpoint_path, corpus, split):
    """Evaluate a checkpoint with COCO box and mask AP."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        checkpoint = CheckpointService.load(checkpoint_path)
        config = load_run_config(
            config_path,
            {"seed": seed, "data": {"corpus": str(corpus) if corpus else None}},
            base=checkpoint.config.model_dump(mode="json"),
        )
        data = load_corpus(config.data, config.seed)
        train, holdout = split_items(data.items, config.data.holdout_fraction)
        items = {"all": data.items, "train": train, "holdout": holdout}[split]
        out = out or checkpoint_path.parent / "eval"
        ensure_writable(out, force)
        result = EvaluationService.evaluate(checkpoint_path, data, items, out_path=out / "eval.json")
        click.echo(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    except UwkitError as e:
        _fail(logger, "Evaluation", e)


@main.command()
@click.argument("image", type=click.Path(path_type=Path))
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("./predictions"),
              help="Directory for the results JSON and overlay")
@click.option("--score-threshold", type=float, default=0.5, help="Minimum detection score")
@click.option("--log-level", default=None, help="Log level (default: from UWKIT_LOG_LEVEL or INFO)")
def infer(image, checkpoint_path, out, score_threshold, log_level):
    """Detect and segment instances in one image."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        result = EvaluationService.infer(checkpoint_path, image, out, score_threshold=score_threshold)
    except UwkitError as e:
        _fail(logger, "Inference", e)
        return
    click.echo(f"✓ {len(result.detections)} detections in {result.image}")
    for d in result.detections:
        x, y, w, h = d.bbox
        click.echo(f"  {d.category:<10} score={d.score:.3f} iou={d.iou_score:.3f} box=({x:.1f}, {y:.1f}, {w:.1f}, {h:.1f})")
    click.echo(dedent(f"""\
        Results: {result.results_path}
        Overlay: {result.overlay_path}
    """))


@main.command()
@common_options
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="Corpus directory (default: data.corpus)")
@click.option("--plots", is_flag=True, help="Also write histogram and channel density plots (needs matplotlib)")
@click.option("--bins", type=int, default=64, help="Intensity histogram bins")
def stats(config_path, seed, out, force, log_level, corpus, plots, bins):
    """Report category, size-bucket and channel-intensity statistics."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        config = load_run_config(config_path, {"seed": seed, "data": {"corpus": str(corpus) if corpus else None}})
        data = load_corpus(config.data, config.seed)
        if out:
            ensure_writable(out, force)
        result = CorpusService.stats(data, out_dir=out, plots=plots, bins=bins)
    except (UwkitError, ImportError) as e:
        _fail(logger, "Statistics", e)
        return
    buckets = result.size_buckets
    r, g, b = result.channel_mean
    click.echo(dedent(f"""\
        Dataset Statistics
        ========================================
        Images: {result.num_images}
        Instances: {result.num_instances}
        Size buckets: small={buckets["small"]} medium={buckets["medium"]} large={buckets["large"]}
        Channel means: R={r:.4f} G={g:.4f} B={b:.4f}
        Per category: {", ".join(f"{k}={v}" for k, v in result.instances_per_class.items())}
        ========================================
    """))


@main.command()
@common_options
@click.option("--seeds", default="0,1,2", help="Comma-separated seeds")
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="Corpus directory (default: data.corpus)")
def benchmark(config_path, seed, out, force, log_level, seeds, corpus):
    """Compare distillation variants over several seeds on held-out images."""
    _setup(log_level)
    logger = logging.getLogger(__name__)
    try:
        config = load_run_config(config_path, {"seed": seed, "data": {"corpus": str(corpus) if corpus else None}})
        out = out or Path(config.output_dir) / "benchmark"
        ensure_writable(out, force)
        result = BenchmarkService(config, out, seeds=tuple(_int_list(seeds))).run()
    except UwkitError as e:
        _fail(logger, "Benchmark", e)
        return
    click.echo(f"✓ Benchmark over seeds {result.seeds} written to {result.output_dir}")
    for name, medians in result.variants.items():
        click.echo(f"  {name:<22} " + " ".join(f"{k}={v:.4f}" for k, v in medians.items()))
    for name, value in result.checks.items():
        click.echo(f"  {name:<40} {value}")


@main.command()
def config_info():
    """Display current configuration."""
    click.echo(dedent(f"""\
        uwkit Configuration
        ========================================
        Data Root: {CONFIG.data_root}
        Device: {CONFIG.device}
        Threads: {CONFIG.num_threads or "torch default"}
        Log Level: {CONFIG.log_level}
        ========================================
    """))
