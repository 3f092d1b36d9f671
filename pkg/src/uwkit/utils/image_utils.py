"""Image file I/O and mask overlay rendering."""

import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageColor

logger = logging.getLogger(__name__)


def load_image(path: Path) -> np.ndarray:
    """Read an image file as float32 H×W×3 in [0, 1].

    Raises:
        FileNotFoundError: path does not exist
        OSError: file is not a readable image
    """
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image: np.ndarray, path: Path):
    """Write an H×W×3 [0, 1] array as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG", optimize=False)


def instance_palette(n: int) -> np.ndarray:
    """n distinct saturated colors, spread around the hue circle by the golden angle."""
    colors = []
    for i in range(n):
        hue = int((i * 137.508) % 360)
        colors.append(ImageColor.getrgb(f"hsl({hue}, 90%, 55%)"))
    return np.asarray(colors, dtype=np.float32).reshape(-1, 3) / 255.0


def render_overlay(image: np.ndarray, masks: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend one distinct color per instance mask over ``image``.

    Pixels outside every mask are left untouched; where masks overlap the
    later (lower-scored) instance is drawn on top.
    """
    overlay = np.array(image, dtype=np.float32, copy=True)
    if len(masks) == 0:
        return overlay
    palette = instance_palette(len(masks))
    for mask, color in zip(masks, palette):
        mask = np.asarray(mask, dtype=bool)
        overlay[mask] = (1.0 - alpha) * np.asarray(image, dtype=np.float32)[mask] + alpha * color
    return overlay
