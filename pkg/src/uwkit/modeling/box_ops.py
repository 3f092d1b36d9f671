"""Anchor generation, box coding, matching and sampling helpers."""

from __future__ import annotations

import math

import torch
from torchvision.ops import box_iou, nms

# Keeps exp() of a width/height delta finite.
BBOX_CLIP = math.log(1000.0 / 16)


def make_anchors(grid: int, stride: float, sizes: tuple[float, ...], ratios: tuple[float, ...]) -> torch.Tensor:
    """(grid·grid·A, 4) xyxy anchors centred on each cell; A = len(sizes)·len(ratios).

    Anchor order is row-major over cells, then sizes, then ratios (h/w).
    """
    base = []
    for size in sizes:
        for ratio in ratios:
            w = size / math.sqrt(ratio)
            h = size * math.sqrt(ratio)
            base.append([-w / 2, -h / 2, w / 2, h / 2])
    base = torch.tensor(base, dtype=torch.float32)
    centers = (torch.arange(grid, dtype=torch.float32) + 0.5) * stride
    cy, cx = torch.meshgrid(centers, centers, indexing="ij")
    shifts = torch.stack([cx, cy, cx, cy], dim=-1).reshape(-1, 1, 4)
    return (shifts + base.view(1, -1, 4)).reshape(-1, 4)


def encode_boxes(boxes: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    """(dx, dy, dw, dh) deltas taking ``anchors`` to ``boxes``."""
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    return torch.stack([(bx - ax) / aw, (by - ay) / ah, torch.log(bw / aw), torch.log(bh / ah)], dim=1)


def decode_boxes(deltas: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + 0.5 * aw
    ay = anchors[:, 1] + 0.5 * ah
    dx, dy = deltas[:, 0], deltas[:, 1]
    dw = deltas[:, 2].clamp(max=BBOX_CLIP)
    dh = deltas[:, 3].clamp(max=BBOX_CLIP)
    cx = dx * aw + ax
    cy = dy * ah + ay
    w = torch.exp(dw) * aw
    h = torch.exp(dh) * ah
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=1)


def clip_boxes(boxes: torch.Tensor, height: int, width: int) -> torch.Tensor:
    x = boxes[:, 0::2].clamp(0, width)
    y = boxes[:, 1::2].clamp(0, height)
    return torch.stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]], dim=1)


def valid_boxes(boxes: torch.Tensor, min_size: float = 1e-3) -> torch.Tensor:
    return ((boxes[:, 2] - boxes[:, 0]) > min_size) & ((boxes[:, 3] - boxes[:, 1]) > min_size)


def stable_nms(boxes: torch.Tensor, scores: torch.Tensor, iou_threshold: float) -> torch.Tensor:
    """NMS with ties in score broken by lower box index; returns kept indices by descending score."""
    if boxes.numel() == 0:
        return torch.zeros((0,), dtype=torch.int64, device=boxes.device)
    order = torch.sort(scores, descending=True, stable=True).indices
    ranks = torch.arange(len(order), 0, -1, dtype=torch.float32, device=boxes.device)
    keep = nms(boxes[order].float(), ranks, iou_threshold)
    return order[keep]


def stable_batched_nms(boxes: torch.Tensor, scores: torch.Tensor, groups: torch.Tensor, iou_threshold: float) -> torch.Tensor:
    """Per-group stable NMS (boxes of different groups never suppress each other)."""
    if boxes.numel() == 0:
        return torch.zeros((0,), dtype=torch.int64, device=boxes.device)
    offset = boxes.max() + 1
    shifted = boxes + (groups.to(boxes.dtype) * offset)[:, None]
    return stable_nms(shifted, scores, iou_threshold)


def match_boxes(anchors: torch.Tensor, gt_boxes: torch.Tensor, pos_iou: float, neg_iou: float,
                allow_low_quality: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Label each anchor 1 (IoU ≥ pos), 0 (IoU < neg) or -1 (ignored).

    With ``allow_low_quality`` every ground truth also claims the anchors
    achieving its highest IoU. Returns (labels, matched gt index).
    """
    labels = torch.zeros(len(anchors), dtype=torch.int64, device=anchors.device)
    matched = torch.zeros(len(anchors), dtype=torch.int64, device=anchors.device)
    if len(gt_boxes) == 0:
        return labels, matched
    iou = box_iou(anchors, gt_boxes)
    best, matched = iou.max(dim=1)
    labels.fill_(-1)
    labels[best < neg_iou] = 0
    labels[best >= pos_iou] = 1
    if allow_low_quality:
        best_per_gt = iou.max(dim=0).values
        claimed = (iou == best_per_gt[None]) & (best_per_gt[None] > 0)
        anchor_idx, gt_idx = torch.nonzero(claimed, as_tuple=True)
        labels[anchor_idx] = 1
        matched[anchor_idx] = gt_idx
    return labels, matched


def sample_labels(labels: torch.Tensor, batch_size: int, pos_fraction: float,
                  generator: torch.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Randomly pick up to ``batch_size`` labelled entries with at most ``pos_fraction`` positives.

    Returns (positive indices, negative indices).
    """
    positive = torch.nonzero(labels >= 1).flatten()
    negative = torch.nonzero(labels == 0).flatten()
    n_pos = min(int(batch_size * pos_fraction), len(positive))
    n_neg = min(batch_size - n_pos, len(negative))
    perm_pos = torch.randperm(len(positive), generator=generator)[:n_pos].to(labels.device)
    perm_neg = torch.randperm(len(negative), generator=generator)[:n_neg].to(labels.device)
    return positive[perm_pos], negative[perm_neg]
