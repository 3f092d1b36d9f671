"""Tensor view over AnnotatedImages for training and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import Dataset

from uwkit.data.transforms import Letterbox, augment, letterbox
from uwkit.models.scene import AnnotatedImage

logger = logging.getLogger(__name__)


@dataclass
class Target:
    boxes: torch.Tensor   # (N, 4) xyxy, canvas pixels
    labels: torch.Tensor  # (N,) int64 in [0, num_classes)
    masks: torch.Tensor   # (N, S, S) bool

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class Sample:
    image: torch.Tensor  # (3, S, S) float32
    target: Target
    image_id: int
    letterbox: Letterbox


@dataclass
class Batch:
    images: torch.Tensor
    targets: list[Target]
    image_ids: list[int]
    letterboxes: list[Letterbox]

    def __len__(self) -> int:
        return int(self.images.shape[0])


def to_target(item: AnnotatedImage) -> Target:
    size = item.height, item.width
    if not item.instances:
        return Target(
            boxes=torch.zeros((0, 4), dtype=torch.float32),
            labels=torch.zeros((0,), dtype=torch.int64),
            masks=torch.zeros((0, *size), dtype=torch.bool),
        )
    return Target(
        boxes=torch.tensor([inst.bbox for inst in item.instances], dtype=torch.float32),
        labels=torch.tensor([inst.class_id for inst in item.instances], dtype=torch.int64),
        masks=torch.from_numpy(np.stack([inst.mask for inst in item.instances])),
    )


class UnderwaterDataset(Dataset):
    """Letterboxed, optionally augmented samples at a fixed canvas size."""

    def __init__(self, items: list[AnnotatedImage], image_size: int, num_classes: int | None = None):
        self.items = items
        self.image_size = image_size
        for item in items:
            item.validate(num_classes)

    def __len__(self) -> int:
        return len(self.items)

    def get(self, index: int, rng: np.random.Generator | None = None) -> Sample:
        """Sample ``index``; augmentation is applied only when ``rng`` is given."""
        item, box = letterbox(self.items[index], self.image_size)
        if rng is not None:
            item = augment(item, rng)
        image = torch.from_numpy(np.ascontiguousarray(item.image, dtype=np.float32)).permute(2, 0, 1)
        return Sample(image=image.contiguous(), target=to_target(item), image_id=item.image_id, letterbox=box)

    def __getitem__(self, index: int) -> Sample:
        return self.get(index)


def collate(samples: list[Sample]) -> Batch:
    return Batch(
        images=torch.stack([s.image for s in samples]),
        targets=[s.target for s in samples],
        image_ids=[s.image_id for s in samples],
        letterboxes=[s.letterbox for s in samples],
    )


def split_items(items: list[AnnotatedImage], holdout_fraction: float) -> tuple[list[AnnotatedImage], list[AnnotatedImage]]:
    """Deterministic (train, holdout) split: the last ceil(fraction·n) images by id are held out."""
    if holdout_fraction <= 0.0:
        return list(items), []
    ordered = sorted(items, key=lambda item: item.image_id)
    n_holdout = int(np.ceil(holdout_fraction * len(ordered)))
    return ordered[:len(ordered) - n_holdout], ordered[len(ordered) - n_holdout:]
