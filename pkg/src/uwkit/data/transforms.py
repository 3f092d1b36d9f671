"""Geometric transforms on AnnotatedImages: letterboxing and train-time augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from uwkit.models.scene import AnnotatedImage, Instance

MIN_AUGMENTED_AREA = 4


@dataclass
class Letterbox:
    """How an image was fitted into the model canvas: ``canvas = resize(image, scale)`` padded bottom/right."""
    scale: float
    height: int
    width: int
    size: int


def _resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return np.asarray(image, dtype=np.float32)
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
    t = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False, antialias=True)
    return t[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def _resize_masks(masks: list[np.ndarray], height: int, width: int) -> list[np.ndarray]:
    if not masks or masks[0].shape == (height, width):
        return masks
    t = torch.from_numpy(np.stack(masks).astype(np.float32))[None]
    t = F.interpolate(t, size=(height, width), mode="nearest")
    return [m.numpy().astype(bool) for m in t[0]]


def _rebuild(item: AnnotatedImage, image: np.ndarray, masks: list[np.ndarray], min_area: int = 1) -> AnnotatedImage:
    instances = [
        Instance.from_mask(mask, inst.class_id)
        for mask, inst in zip(masks, item.instances)
        if mask.sum() >= min_area
    ]
    return AnnotatedImage(image=image, instances=instances, source=item.source,
                          image_id=item.image_id, file_name=item.file_name)


def letterbox(item: AnnotatedImage, size: int) -> tuple[AnnotatedImage, Letterbox]:
    """Resize the longest side to ``size`` and zero-pad to a ``size``×``size`` canvas."""
    h, w = item.height, item.width
    scale = size / max(h, w)
    new_h, new_w = max(1, round(h * scale)), max(1, round(w * scale))
    resized = _resize_image(item.image, new_h, new_w)
    canvas = np.zeros((size, size, 3), dtype=np.float32)
    canvas[:new_h, :new_w] = resized

    masks = _resize_masks([inst.mask for inst in item.instances], new_h, new_w)
    padded = []
    for mask in masks:
        full = np.zeros((size, size), dtype=bool)
        full[:new_h, :new_w] = mask
        padded.append(full)
    return _rebuild(item, canvas, padded), Letterbox(scale=scale, height=h, width=w, size=size)


def unletterbox_masks(masks: np.ndarray, box: Letterbox) -> np.ndarray:
    """Map canvas-resolution masks (N×size×size, bool) back to the original image grid."""
    new_h, new_w = max(1, round(box.height * box.scale)), max(1, round(box.width * box.scale))
    cropped = [m[:new_h, :new_w] for m in masks]
    if not cropped:
        return np.zeros((0, box.height, box.width), dtype=bool)
    return np.stack(_resize_masks(cropped, box.height, box.width))


def augment(item: AnnotatedImage, rng: np.random.Generator,
            scale_range: tuple[float, float] = (0.8, 1.25), flip_prob: float = 0.5) -> AnnotatedImage:
    """Random horizontal flip, random scale, then a random crop (or pad) back to the input size."""
    size_h, size_w = item.height, item.width
    image = item.image
    masks = [inst.mask for inst in item.instances]

    if rng.random() < flip_prob:
        image = image[:, ::-1]
        masks = [m[:, ::-1] for m in masks]

    factor = float(rng.uniform(*scale_range))
    new_h, new_w = max(1, round(size_h * factor)), max(1, round(size_w * factor))
    image = _resize_image(np.ascontiguousarray(image), new_h, new_w)
    masks = _resize_masks([np.ascontiguousarray(m) for m in masks], new_h, new_w)

    top = int(rng.integers(0, new_h - size_h + 1)) if new_h > size_h else 0
    left = int(rng.integers(0, new_w - size_w + 1)) if new_w > size_w else 0
    out = np.zeros((size_h, size_w, 3), dtype=np.float32)
    crop = image[top:top + size_h, left:left + size_w]
    out[:crop.shape[0], :crop.shape[1]] = crop

    out_masks = []
    for mask in masks:
        full = np.zeros((size_h, size_w), dtype=bool)
        cropped = mask[top:top + size_h, left:left + size_w]
        full[:cropped.shape[0], :cropped.shape[1]] = cropped
        out_masks.append(full)
    return _rebuild(item, out, out_masks, min_area=MIN_AUGMENTED_AREA)
