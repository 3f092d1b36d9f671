"""Corpus statistics: category counts, size buckets and channel intensities."""

import logging
from collections import Counter
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from uwkit.metrics.coco_eval import LARGE_AREA, SMALL_AREA
from uwkit.models.scene import AnnotatedImage
from uwkit.models.service_dataclasses import DatasetStats

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    MATPLOTLIB_AVAILABLE = True
except ImportError:
    MATPLOTLIB_AVAILABLE = False
    plt = None

logger = logging.getLogger(__name__)

CHANNELS = ("red", "green", "blue")


def size_bucket(area: float) -> str:
    if area < SMALL_AREA:
        return "small"
    if area < LARGE_AREA:
        return "medium"
    return "large"


def dataset_stats(items: Iterable[AnnotatedImage], category_names: list[str], bins: int = 64) -> DatasetStats:
    """Single pass over ``items``; channel statistics use [0, 1] pixel values."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    pixel_sum = np.zeros(3, dtype=np.float64)
    pixel_sq = np.zeros(3, dtype=np.float64)
    pixel_count = 0
    hist = np.zeros((3, bins), dtype=np.int64)
    per_class: Counter[int] = Counter()
    buckets = {"small": 0, "medium": 0, "large": 0}
    per_image: Counter[int] = Counter()
    num_images = num_instances = 0

    for item in items:
        num_images += 1
        pixels = np.asarray(item.image, dtype=np.float64).reshape(-1, 3)
        pixel_sum += pixels.sum(axis=0)
        pixel_sq += (pixels ** 2).sum(axis=0)
        pixel_count += len(pixels)
        for c in range(3):
            hist[c] += np.histogram(np.clip(pixels[:, c], 0.0, 1.0), bins=edges)[0]
        per_image[len(item.instances)] += 1
        for inst in item.instances:
            num_instances += 1
            per_class[inst.class_id] += 1
            buckets[size_bucket(inst.area)] += 1

    if pixel_count:
        mean = pixel_sum / pixel_count
        std = np.sqrt(np.maximum(pixel_sq / pixel_count - mean ** 2, 0.0))
        width = np.diff(edges)
        density = hist / (hist.sum(axis=1, keepdims=True) * width[None, :])
    else:
        mean = std = np.zeros(3)
        density = np.zeros((3, bins))

    names = {i: name for i, name in enumerate(category_names)}
    stats = DatasetStats(
        num_images=num_images,
        num_instances=num_instances,
        instances_per_class={names.get(i, str(i)): per_class.get(i, 0) for i in sorted(set(names) | set(per_class))},
        size_buckets=buckets,
        instances_per_image=dict(sorted(per_image.items())),
        channel_mean=mean.tolist(),
        channel_std=std.tolist(),
        channel_density=density.tolist(),
        bin_edges=edges.tolist(),
    )
    logger.info(
        f"{num_images} images, {num_instances} instances; buckets {buckets}; "
        f"channel means R={mean[0]:.3f} G={mean[1]:.3f} B={mean[2]:.3f}"
    )
    return stats


def plot_stats(stats: DatasetStats, out_dir: Path) -> list[Path]:
    """Write the instance-count histogram and channel density plots as PNGs."""
    if not MATPLOTLIB_AVAILABLE:
        raise ImportError(
            "matplotlib is not installed. "
            "Install with: pip install 'uwkit[plots]'"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    counts = stats.instances_per_image
    ax.bar(list(counts.keys()), list(counts.values()), color="#3a7ca5")
    ax.set_xlabel("instances per image")
    ax.set_ylabel("images")
    fig.tight_layout()
    path = out_dir / "instances_per_image.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    centers = (np.asarray(stats.bin_edges[:-1]) + np.asarray(stats.bin_edges[1:])) / 2
    for name, density, mean in zip(CHANNELS, stats.channel_density, stats.channel_mean):
        ax.plot(centers, density, color=name, label=f"{name} (mean {mean:.3f})")
    ax.set_xlabel("intensity")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "channel_density.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    logger.info(f"Wrote {len(written)} plots to {out_dir}")
    return written
