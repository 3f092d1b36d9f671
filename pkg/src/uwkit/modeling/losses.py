"""Task and total losses.

ℒ_task = ℒ_cls + ℒ_rpn + ℒ_seg and ℒ = ℒ_task + α·ℒ_MG-UKD. The
``LossReport`` floats are assembled from those identities so they hold
exactly in the training log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from uwkit.exceptions import ShapeError


def smooth_l1(pred: torch.Tensor, target: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Smooth-L1 summed over coordinates and averaged over boxes; 0 for no boxes."""
    if len(pred) == 0:
        return pred.sum() * 0.0
    return F.smooth_l1_loss(pred, target, beta=beta, reduction="sum") / len(pred)


def rpn_loss(objectness: torch.Tensor, labels: torch.Tensor, deltas: torch.Tensor,
             target_deltas: torch.Tensor) -> torch.Tensor:
    """Objectness binary CE over sampled anchors + smooth-L1 (β=1) over positive anchors."""
    if len(objectness):
        cls = F.binary_cross_entropy_with_logits(objectness, labels)
    else:
        cls = objectness.sum() * 0.0
    return cls + smooth_l1(deltas, target_deltas)


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if len(logits) == 0:
        return logits.sum() * 0.0
    return F.cross_entropy(logits, labels)


def mask_targets(gt_masks: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Area-average ground-truth masks (N, H, W) to ``size`` and threshold at 0.5."""
    if len(gt_masks) == 0:
        return torch.zeros((0, *size))
    resized = F.interpolate(gt_masks[:, None].float(), size=size, mode="area")[:, 0]
    return (resized >= 0.5).float()


def mask_bce_loss(mask_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if mask_logits.shape != targets.shape:
        raise ShapeError(f"mask logits {tuple(mask_logits.shape)} vs targets {tuple(targets.shape)}")
    if mask_logits.numel() == 0:
        return mask_logits.sum() * 0.0
    return F.binary_cross_entropy_with_logits(mask_logits, targets.to(mask_logits.dtype))


def s_iou_target(pred_mask: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    """|pred ∩ gt| / |pred ∪ gt| over the last two axes; 1 when both masks are empty."""
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"pred mask {tuple(pred_mask.shape)} vs gt mask {tuple(gt_mask.shape)}")
    pred, gt = pred_mask.bool(), gt_mask.bool()
    inter = (pred & gt).flatten(-2).sum(-1).double()
    union = (pred | gt).flatten(-2).sum(-1).double()
    return torch.where(union > 0, inter / union.clamp_min(1), torch.ones_like(union))


def segmentation_loss(mask_logits: torch.Tensor, targets: torch.Tensor,
                      iou_pred: torch.Tensor | None = None) -> torch.Tensor:
    """Mask BCE plus MSE of the IoU head toward the IoU of the thresholded prediction."""
    loss = mask_bce_loss(mask_logits, targets)
    if iou_pred is not None and len(iou_pred):
        with torch.no_grad():
            iou_target = s_iou_target(mask_logits > 0, targets > 0.5).to(iou_pred.dtype)
        loss = loss + F.mse_loss(iou_pred, iou_target)
    return loss


def total_loss(task, distill, alpha: float = 2e-5):
    """ℒ_task + α·ℒ_MG-UKD for floats or tensors."""
    return task + alpha * distill


@dataclass
class LossReport:
    l_cls: float
    l_rpn: float
    l_seg: float
    l_mgukd: float
    l_mgukd_per_layer: list[float]
    alpha: float
    l_task: float = field(init=False)
    l_mgukd_weighted: float = field(init=False)
    l_total: float = field(init=False)
    loss: torch.Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.l_task = self.l_cls + self.l_rpn + self.l_seg
        self.l_mgukd_weighted = self.alpha * self.l_mgukd
        self.l_total = self.l_task + self.l_mgukd_weighted

    @classmethod
    def from_tensors(cls, l_cls: torch.Tensor, l_rpn: torch.Tensor, l_seg: torch.Tensor,
                     distill_loss: torch.Tensor | None = None, distill_per_layer: list[float] | None = None,
                     alpha: float = 0.0) -> LossReport:
        task = l_cls + l_rpn + l_seg
        loss = task if distill_loss is None else total_loss(task, distill_loss, alpha)
        per_layer = list(distill_per_layer or [])
        return cls(
            l_cls=float(l_cls.detach()),
            l_rpn=float(l_rpn.detach()),
            l_seg=float(l_seg.detach()),
            l_mgukd=float(sum(per_layer)),
            l_mgukd_per_layer=per_layer,
            alpha=alpha,
            loss=loss,
        )

    def is_finite(self) -> bool:
        values = [self.l_cls, self.l_rpn, self.l_seg, self.l_mgukd, self.l_total]
        return all(math.isfinite(v) for v in values)

    def as_record(self, step: int) -> dict:
        return {
            "step": step,
            "l_task": self.l_task,
            "l_cls": self.l_cls,
            "l_rpn": self.l_rpn,
            "l_seg": self.l_seg,
            "l_mgukd": self.l_mgukd,
            "l_mgukd_per_layer": self.l_mgukd_per_layer,
            "l_mgukd_weighted": self.l_mgukd_weighted,
            "l_total": self.l_total,
        }
