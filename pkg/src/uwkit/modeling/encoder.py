"""Plain ViT image encoder exposing every block output as a distillation tap."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from uwkit.exceptions import ConfigError, ShapeError
from uwkit.models.schemas import EncoderConfig

logger = logging.getLogger(__name__)

PIXEL_MEAN = (0.485, 0.456, 0.406)
PIXEL_STD = (0.229, 0.224, 0.225)


@dataclass
class LayerTapOutput:
    """Block outputs ℱ¹..ℱⁿ, each (B, h, w, dim) channels-last."""
    maps: list[torch.Tensor]
    attentions: list[torch.Tensor] | None = None

    @property
    def final(self) -> torch.Tensor:
        return self.maps[-1]

    @property
    def depth(self) -> int:
        return len(self.maps)

    def __getitem__(self, layer: int) -> torch.Tensor:
        """1-indexed layer access."""
        if not 1 <= layer <= len(self.maps):
            raise IndexError(f"layer {layer} outside [1, {len(self.maps)}]")
        return self.maps[layer - 1]


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int, in_chans: int = 3):
        super().__init__()
        self.proj = nn.Conv2d(in_chans, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # B C H W -> B h w C
        return self.proj(x).permute(0, 2, 3, 1)


class Attention(nn.Module):
    """Multi-head self-attention that can hand back its probability maps."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        B, N, C = x.shape
        qkv = self.qkv(x).reshape(B, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, N, C)
        out = self.proj(out)
        return (out, attn) if return_attention else (out, None)


class MLPBlock(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden)
        self.lin2 = nn.Linear(hidden, dim)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


class Block(nn.Module):
    """Pre-norm transformer block; the tap is the output after both residual adds."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLPBlock(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        shortcut = x
        x, attn = self.attn(self.norm1(x), return_attention=return_attention)
        x = shortcut + x
        x = x + self.mlp(self.norm2(x))
        return x, attn


class ImageEncoder(nn.Module):
    """ViT encoder for one role (teacher or student).

    Parameter names are stable (``patch_embed.proj``, ``pos_embed``,
    ``blocks.<i>.{norm1,attn.qkv,attn.proj,norm2,mlp.lin1,mlp.lin2}``) so a
    checkpoint written by one role loads into any encoder built from the same
    config.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        grid = config.grid_size
        self.patch_embed = PatchEmbed(config.patch_size, config.dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, grid, grid, config.dim))
        self.blocks = nn.ModuleList(
            [Block(config.dim, config.heads, config.mlp_ratio) for _ in range(config.depth)]
        )
        self.register_buffer("pixel_mean", torch.tensor(PIXEL_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("pixel_std", torch.tensor(PIXEL_STD).view(1, 3, 1, 1), persistent=False)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def depth(self) -> int:
        return self.config.depth

    def forward(self, images: torch.Tensor, return_attention: bool = False) -> LayerTapOutput:
        size = self.config.image_size
        if images.ndim != 4 or images.shape[1] != 3 or tuple(images.shape[-2:]) != (size, size):
            raise ShapeError(f"expected images of shape (B, 3, {size}, {size}), got {tuple(images.shape)}")
        x = (images - self.pixel_mean.to(images.dtype)) / self.pixel_std.to(images.dtype)
        x = self.patch_embed(x) + self.pos_embed
        B, h, w, C = x.shape
        tokens = x.reshape(B, h * w, C)

        maps, attentions = [], []
        for block in self.blocks:
            tokens, attn = block(tokens, return_attention=return_attention)
            maps.append(tokens.reshape(B, h, w, C))
            if return_attention:
                attentions.append(attn)
        return LayerTapOutput(maps=maps, attentions=attentions if return_attention else None)


def encode(image: np.ndarray | torch.Tensor, encoder: ImageEncoder, return_attention: bool = False) -> LayerTapOutput:
    """Run ``encoder`` on one H×W×3 [0, 1] image (numpy or tensor); taps keep a batch axis of 1."""
    t = torch.as_tensor(np.asarray(image) if isinstance(image, np.ndarray) else image)
    if t.ndim != 3 or t.shape[-1] != 3:
        raise ShapeError(f"expected an H×W×3 image, got shape {tuple(t.shape)}")
    param = next(encoder.parameters())
    t = t.to(dtype=param.dtype, device=param.device).permute(2, 0, 1)[None]
    return encoder(t, return_attention=return_attention)


def teacher_layer_for(student_layer: int, teacher_depth: int, student_depth: int) -> int:
    """round(l · d_t / d_s), halves rounded up, clamped to [1, d_t]."""
    mapped = (2 * student_layer * teacher_depth + student_depth) // (2 * student_depth)
    return min(max(mapped, 1), teacher_depth)


def validate_tap_layers(student_layers, student_depth: int):
    if not student_layers:
        raise ConfigError("tap layer list is empty")
    for layer in student_layers:
        if not 1 <= layer <= student_depth:
            raise ConfigError(f"tap layer {layer} outside student depth [1, {student_depth}]")


def tap_pairs(teacher: LayerTapOutput, student: LayerTapOutput, student_layers) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """(teacher map, student map) pairs in ascending student layer order."""
    validate_tap_layers(student_layers, student.depth)
    return [
        (teacher[teacher_layer_for(layer, teacher.depth, student.depth)], student[layer])
        for layer in sorted(set(student_layers))
    ]


def channels_first(feature: torch.Tensor) -> torch.Tensor:
    """(B, h, w, C) -> (B, C, h, w) for convolutional consumers."""
    return feature.permute(0, 3, 1, 2).contiguous()
