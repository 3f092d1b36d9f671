"""End-to-end prompt generation.

The image embedding is gated per channel, upsampled to 2× and 4× maps for a
region proposal network, and each proposal is RoI-aligned from the
position-encoded embedding and turned into prompt tokens plus class logits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.ops import box_iou
from torchvision.ops import roi_align as tv_roi_align

from uwkit.exceptions import ShapeError
from uwkit.models.schemas import HeadConfig
from uwkit.modeling import box_ops
from uwkit.modeling.losses import rpn_loss

logger = logging.getLogger(__name__)


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = x.mean(1, keepdim=True)
        s = (x - u).pow(2).mean(1, keepdim=True)
        x = (x - u) / torch.sqrt(s + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class Neck(nn.Module):
    """Encoder width -> prompt width; produces ℱ_img as (B, D, h, w)."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_dim, out_dim, kernel_size=1, bias=False)
        self.norm1 = LayerNorm2d(out_dim)
        self.conv2 = nn.Conv2d(out_dim, out_dim, kernel_size=3, padding=1, bias=False)
        self.norm2 = LayerNorm2d(out_dim)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        x = feature.permute(0, 3, 1, 2)
        return self.norm2(self.conv2(self.norm1(self.conv1(x))))


class ChannelAttention(nn.Module):
    """g = sigmoid(f(maxpool(F)) + f(avgpool(F))) with f = conv1x1 → ReLU → conv1x1 shared by both branches.

    When ``enabled`` is False the gate is 1 and the input passes through unchanged.
    """

    def __init__(self, channels: int, reduction: int = 4, enabled: bool = True):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.enabled = enabled
        self.fc1 = nn.Conv2d(channels, hidden, kernel_size=1)
        self.fc2 = nn.Conv2d(hidden, channels, kernel_size=1)

    def _branch(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(pooled)))

    def gate(self, feature: torch.Tensor) -> torch.Tensor:
        """(B, C, 1, 1) per-channel gate."""
        if feature.shape[1] != self.fc1.in_channels:
            raise ShapeError(f"channel attention expects {self.fc1.in_channels} channels, got {feature.shape[1]}")
        if not self.enabled:
            return torch.ones_like(feature[:, :, :1, :1])
        a_max = self._branch(F.adaptive_max_pool2d(feature, 1))
        a_avg = self._branch(F.adaptive_avg_pool2d(feature, 1))
        return torch.sigmoid(a_max + a_avg)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.gate(feature) * feature


def channel_attention(feature: torch.Tensor, module: ChannelAttention) -> torch.Tensor:
    """Gate a channels-last (h, w, c) or (B, h, w, c) map; returns the same layout."""
    squeeze = feature.ndim == 3
    x = (feature.unsqueeze(0) if squeeze else feature).permute(0, 3, 1, 2)
    out = module(x).permute(0, 2, 3, 1)
    return out[0] if squeeze else out


def sinusoidal_position_encoding(dim: int, height: int, width: int, temperature: float = 10000.0) -> torch.Tensor:
    """Fixed 2D encoding (dim, h, w): a quarter of the channels each for sin/cos of x and y."""
    if dim % 4:
        raise ShapeError(f"positional encoding width {dim} must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / temperature ** (torch.arange(quarter, dtype=torch.float32) / quarter)
    y = (torch.arange(height, dtype=torch.float32) + 0.5)[:, None] * omega[None]
    x = (torch.arange(width, dtype=torch.float32) + 0.5)[:, None] * omega[None]
    enc = torch.cat([
        torch.sin(x)[None].expand(height, -1, -1),
        torch.cos(x)[None].expand(height, -1, -1),
        torch.sin(y)[:, None].expand(-1, width, -1),
        torch.cos(y)[:, None].expand(-1, width, -1),
    ], dim=-1)
    return enc.permute(2, 0, 1).contiguous()


def roi_align(feature: torch.Tensor, pos_enc: torch.Tensor | None, boxes: list[torch.Tensor],
              spatial_scale: float, output_size: int = 14) -> torch.Tensor:
    """Pool (feature + pos_enc) inside each box to (K, C, out, out).

    ``boxes`` holds one (n_i, 4) tensor of image-pixel xyxy boxes per image.
    Bins sample 2×2 bilinear points, or one centred point when the bin spans
    at most one feature cell, so a full-map box on an ``out``-sized map is
    the identity and degenerate boxes take the single sample at their point.
    """
    if pos_enc is not None:
        if pos_enc.shape[-3:] != feature.shape[-3:]:
            raise ShapeError(f"positional encoding {tuple(pos_enc.shape)} does not match feature {tuple(feature.shape)}")
        feature = feature + pos_enc
    rois = torch.cat([
        torch.cat([torch.full((len(b), 1), i, dtype=feature.dtype, device=feature.device), b.to(feature.dtype)], dim=1)
        for i, b in enumerate(boxes)
    ]) if boxes else feature.new_zeros((0, 5))
    out = feature.new_zeros((len(rois), feature.shape[1], output_size, output_size))
    if len(rois) == 0:
        return out
    bin_w = (rois[:, 3] - rois[:, 1]) * spatial_scale / output_size
    bin_h = (rois[:, 4] - rois[:, 2]) * spatial_scale / output_size
    single = (bin_w <= 1.0) & (bin_h <= 1.0)
    for sampling, selector in ((1, single), (2, ~single)):
        idx = torch.nonzero(selector).flatten()
        if len(idx):
            out[idx] = tv_roi_align(feature, rois[idx], output_size, spatial_scale=spatial_scale,
                                    sampling_ratio=sampling, aligned=True)
    return out


@dataclass
class ProposalSet:
    """Per-image proposals; ``levels`` is 0 for the 2× map and 1 for the 4× map."""
    boxes: torch.Tensor
    scores: torch.Tensor
    levels: torch.Tensor

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    def check_bounds(self, height: int, width: int):
        b = self.boxes
        if len(b) == 0:
            return
        ok = (b[:, 0] >= 0) & (b[:, 1] >= 0) & (b[:, 2] <= width) & (b[:, 3] <= height)
        ok &= (b[:, 0] < b[:, 2]) & (b[:, 1] < b[:, 3])
        if not bool(ok.all()):
            raise ShapeError(f"{int((~ok).sum())} proposals fall outside the {height}x{width} image")


@dataclass
class PromptEmbedding:
    tokens: torch.Tensor       # (K, n_tokens, D)
    class_logits: torch.Tensor  # (K, num_classes + 1), background last

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


class _Upsampler(nn.Module):
    def __init__(self, channels: int, factor: int, mode: str):
        super().__init__()
        self.factor = factor
        self.mode = mode
        if mode == "transposed":
            layers = []
            for _ in range(int(math.log2(factor))):
                layers += [nn.ConvTranspose2d(channels, channels, kernel_size=2, stride=2), nn.ReLU()]
            self.up = nn.Sequential(*layers)
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "transposed":
            x = self.up(x)
        else:
            x = F.interpolate(x, scale_factor=self.factor, mode="bilinear", align_corners=False)
        return self.conv(x)


class ProposalNetwork(nn.Module):
    """RPN over the 2× and 4× upsampled maps with one shared head."""

    def __init__(self, channels: int, image_size: int, grid: int, config: HeadConfig):
        super().__init__()
        self.config = config
        self.image_size = image_size
        self.upsamplers = nn.ModuleList([
            _Upsampler(channels, 2, config.upsample_mode),
            _Upsampler(channels, 4, config.upsample_mode),
        ])
        self.num_anchors = len(config.anchor_sizes_2x) * len(config.anchor_ratios)
        if len(config.anchor_sizes_4x) * len(config.anchor_ratios) != self.num_anchors:
            raise ShapeError("both proposal levels need the same number of anchors per location")
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.objectness = nn.Conv2d(channels, self.num_anchors, kernel_size=1)
        self.deltas = nn.Conv2d(channels, 4 * self.num_anchors, kernel_size=1)
        for layer in (self.conv, self.objectness, self.deltas):
            nn.init.normal_(layer.weight, std=0.01)
            nn.init.zeros_(layer.bias)

        for level, (factor, sizes) in enumerate(((2, config.anchor_sizes_2x), (4, config.anchor_sizes_4x))):
            g = grid * factor
            anchors = box_ops.make_anchors(g, image_size / g, sizes, config.anchor_ratios)
            self.register_buffer(f"anchors_{level}", anchors, persistent=False)

    @property
    def anchors(self) -> list[torch.Tensor]:
        return [self.anchors_0, self.anchors_1]

    def head(self, feature: torch.Tensor) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        """Per-level objectness (B, H·W·A) and deltas (B, H·W·A, 4), anchor-ordered."""
        logits, deltas = [], []
        for up in self.upsamplers:
            x = F.relu(self.conv(up(feature)))
            B, _, H, W = x.shape
            logits.append(self.objectness(x).permute(0, 2, 3, 1).reshape(B, H * W * self.num_anchors))
            deltas.append(self.deltas(x).view(B, self.num_anchors, 4, H, W).permute(0, 3, 4, 1, 2).reshape(B, -1, 4))
        return logits, deltas

    def _proposals(self, logits: list[torch.Tensor], deltas: list[torch.Tensor], post_nms_top_n: int) -> list[ProposalSet]:
        size = self.image_size
        out = []
        for b in range(logits[0].shape[0]):
            boxes, scores, levels = [], [], []
            for level, anchors in enumerate(self.anchors):
                score = logits[level][b].detach()
                k = min(self.config.pre_nms_top_n, len(score))
                top = torch.sort(score, descending=True, stable=True).indices[:k]
                decoded = box_ops.clip_boxes(box_ops.decode_boxes(deltas[level][b, top].detach(), anchors[top]), size, size)
                keep = box_ops.valid_boxes(decoded)
                boxes.append(decoded[keep])
                scores.append(score[top][keep])
                levels.append(torch.full((int(keep.sum()),), level, dtype=torch.int64, device=score.device))
            boxes_b, scores_b, levels_b = torch.cat(boxes), torch.cat(scores), torch.cat(levels)
            keep = box_ops.stable_nms(boxes_b, scores_b, self.config.nms_iou)[:post_nms_top_n]
            proposals = ProposalSet(boxes_b[keep], scores_b[keep], levels_b[keep])
            proposals.check_bounds(size, size)
            out.append(proposals)
        return out

    def loss(self, logits: list[torch.Tensor], deltas: list[torch.Tensor], gt_boxes: list[torch.Tensor],
             generator: torch.Generator | None = None) -> torch.Tensor:
        anchors = torch.cat(self.anchors)
        all_logits = torch.cat(logits, dim=1)
        all_deltas = torch.cat(deltas, dim=1)
        sel_logits, sel_labels, pos_deltas, pos_targets = [], [], [], []
        for b, gt in enumerate(gt_boxes):
            labels, matched = box_ops.match_boxes(anchors, gt, self.config.rpn_pos_iou, self.config.rpn_neg_iou)
            pos, neg = box_ops.sample_labels(labels, self.config.rpn_batch_per_image,
                                             self.config.rpn_pos_fraction, generator=generator)
            idx = torch.cat([pos, neg])
            sel_logits.append(all_logits[b, idx])
            sel_labels.append((labels[idx] == 1).to(all_logits.dtype))
            pos_deltas.append(all_deltas[b, pos])
            if len(pos):
                pos_targets.append(box_ops.encode_boxes(gt[matched[pos]], anchors[pos]))
            else:
                pos_targets.append(all_deltas.new_zeros((0, 4)))
        n_pos = sum(len(p) for p in pos_deltas)
        if n_pos == 0:
            logger.warning("No positive anchors in batch; objectness trained on negatives only")
        return rpn_loss(torch.cat(sel_logits), torch.cat(sel_labels), torch.cat(pos_deltas), torch.cat(pos_targets))

    def forward(self, feature: torch.Tensor, gt_boxes: list[torch.Tensor] | None = None,
                generator: torch.Generator | None = None) -> tuple[list[ProposalSet], torch.Tensor | None]:
        logits, deltas = self.head(feature)
        top_n = self.config.post_nms_top_n_train if gt_boxes is not None else self.config.post_nms_top_n_test
        proposals = self._proposals(logits, deltas, top_n)
        loss = self.loss(logits, deltas, gt_boxes, generator) if gt_boxes is not None else None
        return proposals, loss


class PromptHead(nn.Module):
    """3×3 conv → flatten → 2-layer MLP to prompt tokens, with a parallel class head."""

    def __init__(self, channels: int, roi_size: int, conv_channels: int, hidden: int,
                 n_tokens: int, token_dim: int, num_classes: int):
        super().__init__()
        self.n_tokens, self.token_dim = n_tokens, token_dim
        self.conv = nn.Conv2d(channels, conv_channels, kernel_size=3, padding=1)
        self.fc1 = nn.Linear(conv_channels * roi_size * roi_size, hidden)
        self.fc2 = nn.Linear(hidden, n_tokens * token_dim)
        self.classifier = nn.Linear(hidden, num_classes + 1)

    def forward(self, roi: torch.Tensor) -> PromptEmbedding:
        x = F.relu(self.conv(roi)).flatten(1)
        x = F.relu(self.fc1(x))
        tokens = self.fc2(x).view(-1, self.n_tokens, self.token_dim)
        return PromptEmbedding(tokens=tokens, class_logits=self.classifier(x))


@dataclass
class ProposalTargets:
    """Sampled training proposals with their classification and mask targets."""
    boxes: list[torch.Tensor]
    labels: torch.Tensor          # (K,), num_classes for background
    matched: torch.Tensor         # (K,) index into that image's instances; valid where positive
    batch_index: torch.Tensor     # (K,)
    num_classes: int

    @property
    def positive(self) -> torch.Tensor:
        return self.labels < self.num_classes


class PromptGenerator(nn.Module):
    """Channel attention, proposals, RoIAlign and the prompt head."""

    def __init__(self, config: HeadConfig, image_size: int, grid: int):
        super().__init__()
        self.config = config
        self.image_size = image_size
        self.grid = grid
        d = config.prompt_dim
        self.channel_attention = ChannelAttention(d, config.channel_reduction, enabled=config.channel_attention)
        self.rpn = ProposalNetwork(d, image_size, grid, config)
        self.prompt_head = PromptHead(d, config.roi_size, config.roi_conv_channels, config.mlp_hidden,
                                      config.n_tokens, d, config.num_classes)
        self.register_buffer("pos_enc", sinusoidal_position_encoding(d, grid, grid), persistent=False)

    @property
    def spatial_scale(self) -> float:
        return self.grid / self.image_size

    def prompts(self, image_feature: torch.Tensor, boxes: list[torch.Tensor]) -> PromptEmbedding:
        if self.config.roi_feature == "gated":
            image_feature = self.channel_attention(image_feature)
        roi = roi_align(image_feature, self.pos_enc.to(image_feature.dtype), boxes, self.spatial_scale,
                        self.config.roi_size)
        return self.prompt_head(roi)

    def sample_proposals(self, proposals: list[ProposalSet], gt_boxes: list[torch.Tensor], gt_labels: list[torch.Tensor],
                         generator: torch.Generator | None = None) -> ProposalTargets:
        c = self.config
        boxes, labels, matched, batch_index = [], [], [], []
        for b, (props, gt, gt_cls) in enumerate(zip(proposals, gt_boxes, gt_labels)):
            candidates = torch.cat([props.boxes, gt.to(props.boxes.dtype)])
            if len(gt):
                best, idx = box_iou(candidates, gt).max(dim=1)
                cls = torch.where(best >= c.proposal_match_iou, gt_cls[idx], torch.full_like(idx, c.num_classes))
            else:
                idx = torch.zeros(len(candidates), dtype=torch.int64)
                cls = torch.full((len(candidates),), c.num_classes, dtype=torch.int64)
            flags = torch.where(cls < c.num_classes, torch.ones_like(cls), torch.zeros_like(cls))
            pos, neg = box_ops.sample_labels(flags, c.proposals_per_image, c.proposal_pos_fraction, generator=generator)
            keep = torch.cat([pos, neg])
            boxes.append(candidates[keep])
            labels.append(cls[keep])
            matched.append(idx[keep])
            batch_index.append(torch.full((len(keep),), b, dtype=torch.int64))
        return ProposalTargets(boxes=boxes, labels=torch.cat(labels), matched=torch.cat(matched),
                               batch_index=torch.cat(batch_index), num_classes=c.num_classes)

    def forward(self, image_feature: torch.Tensor, gt_boxes: list[torch.Tensor] | None = None,
                generator: torch.Generator | None = None) -> tuple[list[ProposalSet], torch.Tensor | None]:
        """Proposals from the gated embedding (and the RPN loss when ground truth is given)."""
        gated = self.channel_attention(image_feature)
        return self.rpn(gated, gt_boxes, generator=generator)
