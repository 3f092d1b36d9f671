"""Scene and annotation records shared by the data generator, loader and evaluator."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from uwkit.exceptions import ShapeError

Box = tuple[float, float, float, float]


def mask_to_bbox(mask: np.ndarray) -> Box:
    """Tight (x1, y1, x2, y2) bound of a binary mask; x2/y2 are exclusive pixel edges."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return (0.0, 0.0, 0.0, 0.0)
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


@dataclass
class Instance:
    mask: np.ndarray
    class_id: int
    bbox: Box
    polygon: list[float] | None = None

    @classmethod
    def from_mask(cls, mask: np.ndarray, class_id: int, polygon: list[float] | None = None) -> Instance:
        mask = np.asarray(mask, dtype=bool)
        return cls(mask=mask, class_id=int(class_id), bbox=mask_to_bbox(mask), polygon=polygon)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class SceneSpec:
    """Ground truth of one synthetic scene before degradation."""
    clean_image: np.ndarray
    depth: np.ndarray
    beta_d: np.ndarray
    beta_b: np.ndarray
    veiling: np.ndarray
    instances: list[Instance] = field(default_factory=list)
    seed: int | None = None

    def validate(self):
        if self.clean_image.ndim != 3 or self.clean_image.shape[2] != 3:
            raise ShapeError(f"clean_image must be H×W×3, got {self.clean_image.shape}")
        if self.depth.shape != self.clean_image.shape[:2]:
            raise ShapeError(
                f"depth shape {self.depth.shape} does not match image grid {self.clean_image.shape[:2]}"
            )
        for name in ("beta_d", "beta_b", "veiling"):
            value = np.asarray(getattr(self, name))
            if value.shape != (3,):
                raise ShapeError(f"{name} must hold one value per RGB channel, got shape {value.shape}")
        if (np.asarray(self.beta_d) < 0).any() or (np.asarray(self.beta_b) < 0).any():
            raise ValueError("attenuation and backscatter coefficients must be non-negative")
        if (self.depth < 0).any():
            raise ValueError("depth must be non-negative")
        for name in ("clean_image", "veiling"):
            value = np.asarray(getattr(self, name))
            if not np.isfinite(value).all() or value.min(initial=0.0) < 0.0 or value.max(initial=0.0) > 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for array in (self.clean_image, self.depth, self.beta_d, self.beta_b, self.veiling):
            digest.update(np.ascontiguousarray(array).tobytes())
        for inst in self.instances:
            digest.update(np.packbits(inst.mask).tobytes())
            digest.update(np.asarray([inst.class_id, *inst.bbox], dtype=np.float64).tobytes())
        return digest.hexdigest()


@dataclass
class AnnotatedImage:
    image: np.ndarray
    instances: list[Instance] = field(default_factory=list)
    source: Literal["synthetic", "coco"] = "synthetic"
    image_id: int = 0
    file_name: str = ""

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def validate(self, num_classes: int | None = None):
        h, w = self.image.shape[:2]
        for inst in self.instances:
            if inst.mask.shape != (h, w):
                raise ShapeError(f"instance mask {inst.mask.shape} does not match image {(h, w)}")
            if num_classes is not None and not 0 <= inst.class_id < num_classes:
                raise ValueError(f"class id {inst.class_id} outside [0, {num_classes})")
