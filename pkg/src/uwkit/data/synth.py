"""Synthetic underwater scenes.

Scenes are clusters of soft-edged blobs over a textured seabed, degraded with
the SeaThru image-formation model:

    I_c = J_c * exp(-beta_D_c * z) + B_inf_c * (1 - exp(-beta_B_c * z))
"""

from __future__ import annotations

import logging
import math

import numpy as np

from uwkit.exceptions import ConfigError
from uwkit.models.scene import AnnotatedImage, Instance, SceneSpec
from uwkit.models.schemas import SceneConfig
from uwkit.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

CATEGORY_NAMES: tuple[str, ...] = (
    "fish", "coral", "reptile", "mollusk", "plant",
    "ruin", "garbage", "human", "robot", "arthropod",
)

# Clean radiance per category; hues are spread so classes stay separable
# after the red channel is attenuated away.
_BASE_COLORS = np.array([
    [0.95, 0.60, 0.15],
    [0.90, 0.35, 0.55],
    [0.35, 0.75, 0.30],
    [0.80, 0.80, 0.75],
    [0.20, 0.55, 0.20],
    [0.55, 0.45, 0.35],
    [0.85, 0.85, 0.20],
    [0.90, 0.70, 0.60],
    [0.70, 0.72, 0.78],
    [0.85, 0.30, 0.20],
])

_SEABED_COLORS = np.array([
    [0.62, 0.56, 0.42],
    [0.38, 0.36, 0.32],
])

_PLACEMENT_ATTEMPTS = 60
_POLYGON_VERTICES = 24


def validate_scene_config(config: SceneConfig):
    if config.min_instances > config.max_instances:
        raise ConfigError(
            f"instance count range is empty: min {config.min_instances} > max {config.max_instances}"
        )
    lo, hi = config.radius_range
    if not 0 < lo <= hi:
        raise ConfigError(f"radius_range must satisfy 0 < low <= high, got {config.radius_range}")
    lo, hi = config.depth_range
    if not 0 <= lo <= hi:
        raise ConfigError(f"depth_range must satisfy 0 <= low <= high, got {config.depth_range}")
    for name in ("beta_d", "beta_b", "veiling"):
        for channel, (lo, hi) in zip(("red", "green", "blue"), getattr(config, name).as_list()):
            if lo > hi:
                raise ConfigError(f"{name}.{channel} range is empty: {lo} > {hi}")
    red_low = config.beta_d.red[0]
    if red_low <= max(config.beta_d.green[1], config.beta_d.blue[1]):
        raise ConfigError("red attenuation range must lie strictly above the green and blue ranges")
    if any(hi > 1.0 for _, hi in config.veiling.as_list()):
        raise ConfigError("veiling light must lie in [0, 1]")


def degrade(scene: SceneSpec) -> AnnotatedImage:
    """Apply the SeaThru formation model to a clean scene, clamped to [0, 1]."""
    scene.validate()
    clean = np.asarray(scene.clean_image, dtype=np.float64)
    z = np.asarray(scene.depth, dtype=np.float64)[..., None]
    beta_d = np.asarray(scene.beta_d, dtype=np.float64)
    beta_b = np.asarray(scene.beta_b, dtype=np.float64)
    veiling = np.asarray(scene.veiling, dtype=np.float64)

    direct = clean * np.exp(-beta_d * z)
    backscatter = veiling * (1.0 - np.exp(-beta_b * z))
    image = np.clip(direct + backscatter, 0.0, 1.0)
    return AnnotatedImage(image=image, instances=list(scene.instances), source="synthetic")


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled coarse uniform noise in [0, 1]."""
    coarse = rng.random((cells + 1, cells + 1))
    t = np.linspace(0.0, cells, size)
    i0 = np.minimum(t.astype(int), cells - 1)
    f = t - i0
    rows = coarse[i0] * (1.0 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def _sample_range(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


class _Blob:
    """Rotated ellipse with a low-order harmonic wobble on its outline."""

    def __init__(self, rng: np.random.Generator, cx: float, cy: float, radius: float):
        self.cx, self.cy = cx, cy
        self.rx = radius * rng.uniform(0.8, 1.25)
        self.ry = radius * rng.uniform(0.55, 1.0)
        self.angle = rng.uniform(0.0, math.pi)
        self.wobble = rng.uniform(0.0, 0.22)
        self.lobes = int(rng.integers(3, 6))
        self.phase = rng.uniform(0.0, 2 * math.pi)

    def _local(self, xx: np.ndarray, yy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx, dy = xx - self.cx, yy - self.cy
        return c * dx + s * dy, -s * dx + c * dy

    def rho(self, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
        """Normalized radius: <= 1 inside the outline."""
        u, v = self._local(xx, yy)
        theta = np.arctan2(v / self.ry, u / self.rx)
        scale = 1.0 + self.wobble * np.cos(self.lobes * theta + self.phase)
        return np.sqrt((u / self.rx) ** 2 + (v / self.ry) ** 2) / scale

    def polygon(self) -> list[float]:
        c, s = math.cos(self.angle), math.sin(self.angle)
        points = []
        for j in range(_POLYGON_VERTICES):
            theta = 2 * math.pi * j / _POLYGON_VERTICES
            scale = 1.0 + self.wobble * math.cos(self.lobes * theta + self.phase)
            u = self.rx * scale * math.cos(theta)
            v = self.ry * scale * math.sin(theta)
            points.extend([self.cx + c * u - s * v, self.cy + s * u + c * v])
        return points


def generate_scene(seed: int, config: SceneConfig) -> SceneSpec:
    """Deterministic clustered scene for ``seed``."""
    validate_scene_config(config)
    rng = np.random.default_rng(seed)
    size = config.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5

    texture = _smooth_noise(rng, size, cells=6)
    mix = np.clip(0.5 * texture + 0.5 * _smooth_noise(rng, size, cells=3), 0.0, 1.0)
    clean = (
        _SEABED_COLORS[0][None, None, :] * (1.0 - mix[..., None])
        + _SEABED_COLORS[1][None, None, :] * mix[..., None]
    )
    clean *= (0.85 + 0.15 * texture)[..., None]

    z_lo, z_hi = config.depth_range
    vertical = 1.0 - yy / size
    depth = z_lo + (z_hi - z_lo) * np.clip(0.65 * vertical + 0.35 * _smooth_noise(rng, size, cells=4), 0.0, 1.0)

    n_instances = int(rng.integers(config.min_instances, config.max_instances + 1))
    occupied = np.zeros((size, size), dtype=bool)
    placed: list[tuple[float, float, float, int]] = []
    instances: list[Instance] = []
    r_lo, r_hi = config.radius_range

    for index in range(n_instances):
        for attempt in range(_PLACEMENT_ATTEMPTS):
            shrink = 0.93 ** attempt
            joins_cluster = placed and attempt < _PLACEMENT_ATTEMPTS // 2 and rng.random() < config.cluster_tendency
            if joins_cluster:
                ax, ay, ar, class_id = placed[int(rng.integers(len(placed)))]
                radius = max(r_lo, ar * rng.uniform(0.8, 1.2)) * shrink
                offset = rng.normal(0.0, 1.6 * ar, size=2)
                cx, cy = ax + offset[0], ay + offset[1]
            else:
                class_id = int(rng.integers(config.num_classes))
                radius = _sample_range(rng, (r_lo, r_hi)) * shrink
                cx = rng.uniform(0.0, size)
                cy = rng.uniform(0.0, size)
            blob = _Blob(rng, cx, cy, radius)
            rho = blob.rho(xx, yy)
            mask = rho <= 1.0
            if mask.sum() < config.min_instance_area or (mask & occupied).any():
                continue
            break
        else:
            raise ConfigError(
                f"could not place instance {index + 1} of {n_instances} in a {size}px scene; "
                "reduce max_instances or radius_range"
            )

        color = np.clip(_BASE_COLORS[class_id] + rng.uniform(-config.color_jitter, config.color_jitter, 3), 0.0, 1.0)
        alpha = np.where(mask, np.clip((1.0 - rho) * 5.0 + 0.35, 0.0, 1.0), 0.0)
        shade = 0.8 + 0.2 * np.clip(1.0 - rho, 0.0, 1.0)
        clean = clean * (1.0 - alpha[..., None]) + (color[None, None, :] * shade[..., None]) * alpha[..., None]
        depth = np.where(mask, depth * 0.9, depth)

        occupied |= mask
        placed.append((cx, cy, radius, class_id))
        instances.append(Instance.from_mask(mask, class_id, polygon=blob.polygon()))

    beta_d = np.array([_sample_range(rng, r) for r in config.beta_d.as_list()])
    beta_b = np.array([_sample_range(rng, r) for r in config.beta_b.as_list()])
    veiling = np.array([_sample_range(rng, r) for r in config.veiling.as_list()])

    return SceneSpec(
        clean_image=np.clip(clean, 0.0, 1.0),
        depth=depth,
        beta_d=beta_d,
        beta_b=beta_b,
        veiling=veiling,
        instances=instances,
        seed=seed,
    )


def synthesize(n_images: int, seed: int, config: SceneConfig) -> list[tuple[SceneSpec, AnnotatedImage]]:
    """Generate and degrade ``n_images`` scenes, each from its own derived seed."""
    validate_scene_config(config)
    corpus = []
    for index in range(n_images):
        scene = generate_scene(derive_seed(seed, "scene", index), config)
        item = degrade(scene)
        item.image_id = index + 1
        item.file_name = f"{index:06d}.png"
        corpus.append((scene, item))
    logger.info(f"Synthesized {n_images} scenes (seed={seed})")
    return corpus
