"""The full segmentation model: encoder, neck, prompt generator and mask decoder.

Inference follows encode → prompt generation → decode with no external
prompts; training returns the three task-loss terms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from uwkit.models.schemas import EncoderConfig, HeadConfig
from uwkit.modeling.box_ops import stable_batched_nms
from uwkit.modeling.encoder import ImageEncoder, LayerTapOutput
from uwkit.modeling.eupg import Neck, PromptGenerator
from uwkit.modeling.losses import classification_loss, mask_targets, segmentation_loss
from uwkit.modeling.mask_decoder import MaskDecoder

logger = logging.getLogger(__name__)


@dataclass
class DetectionResult:
    """Detections for one image in canvas coordinates, sorted by descending score."""
    boxes: torch.Tensor       # (N, 4) xyxy
    labels: torch.Tensor      # (N,)
    scores: torch.Tensor      # (N,)
    masks: torch.Tensor       # (N, S, S) bool
    iou_scores: torch.Tensor  # (N,)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class TaskOutput:
    taps: LayerTapOutput
    l_cls: torch.Tensor
    l_rpn: torch.Tensor
    l_seg: torch.Tensor
    num_positive: int


class UWSAM(nn.Module):
    def __init__(self, encoder_config: EncoderConfig, head_config: HeadConfig):
        super().__init__()
        self.encoder_config = encoder_config
        self.head_config = head_config
        d = head_config.prompt_dim
        self.encoder = ImageEncoder(encoder_config)
        self.neck = Neck(encoder_config.dim, d)
        self.eupg = PromptGenerator(head_config, encoder_config.image_size, encoder_config.grid_size)
        self.decoder = MaskDecoder(d, depth=head_config.decoder_depth, num_heads=head_config.decoder_heads,
                                   mlp_dim=head_config.decoder_mlp_dim)

    @property
    def image_size(self) -> int:
        return self.encoder_config.image_size

    @property
    def num_classes(self) -> int:
        return self.head_config.num_classes

    def image_embedding(self, taps: LayerTapOutput) -> torch.Tensor:
        return self.neck(taps.final)

    def task_losses(self, taps: LayerTapOutput, targets, generator: torch.Generator | None = None) -> TaskOutput:
        """ℒ_cls, ℒ_rpn and ℒ_seg for a batch whose encoder taps are already computed."""
        feature = self.image_embedding(taps)
        gt_boxes = [t.boxes for t in targets]
        gt_labels = [t.labels for t in targets]
        proposals, l_rpn = self.eupg(feature, gt_boxes, generator=generator)
        sampled = self.eupg.sample_proposals(proposals, gt_boxes, gt_labels, generator=generator)
        prompts = self.eupg.prompts(feature, sampled.boxes)
        l_cls = classification_loss(prompts.class_logits, sampled.labels)

        positive = sampled.positive
        num_positive = int(positive.sum())
        if num_positive:
            batch_index = sampled.batch_index[positive]
            out = self.decoder(feature[batch_index], self.eupg.pos_enc, prompts.tokens[positive])
            gt_masks = torch.stack([
                targets[b].masks[m] for b, m in zip(batch_index.tolist(), sampled.matched[positive].tolist())
            ])
            goal = mask_targets(gt_masks, tuple(out.mask_logits.shape[-2:])).to(out.mask_logits.dtype)
            l_seg = segmentation_loss(out.mask_logits, goal, out.iou_scores)
        else:
            l_seg = feature.sum() * 0.0
        return TaskOutput(taps=taps, l_cls=l_cls, l_rpn=l_rpn, l_seg=l_seg, num_positive=num_positive)

    def forward_train(self, images: torch.Tensor, targets, generator: torch.Generator | None = None) -> TaskOutput:
        return self.task_losses(self.encoder(images), targets, generator=generator)

    @torch.no_grad()
    def predict(self, images: torch.Tensor, score_threshold: float | None = None) -> list[DetectionResult]:
        c = self.head_config
        threshold = c.score_threshold if score_threshold is None else score_threshold
        feature = self.image_embedding(self.encoder(images))
        proposals, _ = self.eupg(feature)
        prompts = self.eupg.prompts(feature, [p.boxes for p in proposals])
        probs = torch.softmax(prompts.class_logits, dim=-1)

        results, offset = [], 0
        size = (self.image_size, self.image_size)
        for b, props in enumerate(proposals):
            n = len(props)
            cls_probs = probs[offset:offset + n, :c.num_classes]
            tokens = prompts.tokens[offset:offset + n]
            offset += n

            scores = cls_probs.flatten()
            labels = torch.arange(c.num_classes, device=probs.device).repeat(n)
            box_index = torch.arange(n, device=probs.device).repeat_interleave(c.num_classes)
            candidate = scores > threshold
            scores, labels, box_index = scores[candidate], labels[candidate], box_index[candidate]
            keep = stable_batched_nms(props.boxes[box_index], scores, labels, c.class_nms_iou)
            keep = keep[:c.detections_per_image]
            box_index = box_index[keep]

            decoded = self.decoder(feature[b:b + 1].expand(len(keep), -1, -1, -1), self.eupg.pos_enc, tokens[box_index])
            results.append(DetectionResult(
                boxes=props.boxes[box_index],
                labels=labels[keep],
                scores=scores[keep],
                masks=decoded.masks(size),
                iou_scores=decoded.iou_scores,
            ))
        return results
