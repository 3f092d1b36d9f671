"""SAM-style mask decoder driven by generated prompt tokens.

Token order is fixed: [IoU token, mask token, prompt tokens...]. A two-way
transformer lets tokens and image positions attend to each other; the mask
token then reads out a mask from the 4× upscaled embedding and the IoU token
predicts the mask's quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from uwkit.exceptions import ShapeError
from uwkit.modeling.eupg import LayerNorm2d


class MLP(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, num_layers: int, sigmoid_output: bool = False):
        super().__init__()
        self.num_layers = num_layers
        dims = [hidden_dim] * (num_layers - 1)
        self.layers = nn.ModuleList(nn.Linear(n, k) for n, k in zip([input_dim] + dims, dims + [output_dim]))
        self.sigmoid_output = sigmoid_output

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = F.relu(layer(x)) if i < self.num_layers - 1 else layer(x)
        if self.sigmoid_output:
            x = torch.sigmoid(x)
        return x


class Attention(nn.Module):
    """Cross/self attention with separate q, k, v projections.

    Set ``keep_attention`` to retain the last probability maps in ``last_attention``.
    """

    def __init__(self, embedding_dim: int, num_heads: int, downsample_rate: int = 1):
        super().__init__()
        self.internal_dim = embedding_dim // downsample_rate
        self.num_heads = num_heads
        if self.internal_dim % num_heads:
            raise ShapeError("num_heads must divide embedding_dim")
        self.q_proj = nn.Linear(embedding_dim, self.internal_dim)
        self.k_proj = nn.Linear(embedding_dim, self.internal_dim)
        self.v_proj = nn.Linear(embedding_dim, self.internal_dim)
        self.out_proj = nn.Linear(self.internal_dim, embedding_dim)
        self.keep_attention = False
        self.last_attention: torch.Tensor | None = None

    def _separate_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        return x.reshape(b, n, self.num_heads, c // self.num_heads).transpose(1, 2)

    def _recombine_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, h, n, c = x.shape
        return x.transpose(1, 2).reshape(b, n, h * c)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        q = self._separate_heads(self.q_proj(q))
        k = self._separate_heads(self.k_proj(k))
        v = self._separate_heads(self.v_proj(v))
        attn = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        attn = torch.softmax(attn, dim=-1)
        if self.keep_attention:
            self.last_attention = attn.detach()
        return self.out_proj(self._recombine_heads(attn @ v))


class TwoWayAttentionBlock(nn.Module):
    """Token self-attention, token→image cross-attention, token MLP, image→token cross-attention."""

    def __init__(self, embedding_dim: int, num_heads: int, mlp_dim: int, skip_first_layer_pe: bool = False):
        super().__init__()
        self.self_attn = Attention(embedding_dim, num_heads)
        self.norm1 = nn.LayerNorm(embedding_dim)
        self.cross_attn_token_to_image = Attention(embedding_dim, num_heads, downsample_rate=2)
        self.norm2 = nn.LayerNorm(embedding_dim)
        self.mlp = MLP(embedding_dim, mlp_dim, embedding_dim, num_layers=2)
        self.norm3 = nn.LayerNorm(embedding_dim)
        self.norm4 = nn.LayerNorm(embedding_dim)
        self.cross_attn_image_to_token = Attention(embedding_dim, num_heads, downsample_rate=2)
        self.skip_first_layer_pe = skip_first_layer_pe

    def forward(self, queries: torch.Tensor, keys: torch.Tensor, query_pe: torch.Tensor,
                key_pe: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if self.skip_first_layer_pe:
            queries = self.self_attn(q=queries, k=queries, v=queries)
        else:
            q = queries + query_pe
            queries = queries + self.self_attn(q=q, k=q, v=queries)
        queries = self.norm1(queries)

        q = queries + query_pe
        k = keys + key_pe
        queries = self.norm2(queries + self.cross_attn_token_to_image(q=q, k=k, v=keys))
        queries = self.norm3(queries + self.mlp(queries))

        q = queries + query_pe
        k = keys + key_pe
        keys = self.norm4(keys + self.cross_attn_image_to_token(q=k, k=q, v=queries))
        return queries, keys


class TwoWayTransformer(nn.Module):
    def __init__(self, depth: int, embedding_dim: int, num_heads: int, mlp_dim: int):
        super().__init__()
        self.layers = nn.ModuleList(
            TwoWayAttentionBlock(embedding_dim, num_heads, mlp_dim, skip_first_layer_pe=(i == 0))
            for i in range(depth)
        )
        self.final_attn_token_to_image = Attention(embedding_dim, num_heads, downsample_rate=2)
        self.norm_final_attn = nn.LayerNorm(embedding_dim)

    def attention_modules(self) -> list[Attention]:
        return [m for m in self.modules() if isinstance(m, Attention)]

    def forward(self, image_embedding: torch.Tensor, image_pe: torch.Tensor,
                point_embedding: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # B C H W -> B HW C
        image_embedding = image_embedding.flatten(2).permute(0, 2, 1)
        image_pe = image_pe.flatten(2).permute(0, 2, 1)
        queries, keys = point_embedding, image_embedding
        for layer in self.layers:
            queries, keys = layer(queries, keys, point_embedding, image_pe)
        q = queries + point_embedding
        k = keys + image_pe
        queries = self.norm_final_attn(queries + self.final_attn_token_to_image(q=q, k=k, v=keys))
        return queries, keys


@dataclass
class DecodeOutput:
    mask_logits: torch.Tensor  # (K, 4h, 4w)
    iou_scores: torch.Tensor   # (K,) in [0, 1]

    def masks(self, size: tuple[int, int] | None = None) -> torch.Tensor:
        """Binary masks (logit > 0), optionally upsampled to ``size`` first."""
        logits = self.mask_logits
        if size is not None and tuple(logits.shape[-2:]) != tuple(size):
            logits = F.interpolate(logits[:, None], size=size, mode="bilinear", align_corners=False)[:, 0]
        return logits > 0


class MaskDecoder(nn.Module):
    def __init__(self, transformer_dim: int, depth: int = 2, num_heads: int = 4, mlp_dim: int = 128,
                 iou_head_depth: int = 3, iou_head_hidden_dim: int = 64):
        super().__init__()
        self.transformer_dim = transformer_dim
        self.transformer = TwoWayTransformer(depth, transformer_dim, num_heads, mlp_dim)
        self.iou_token = nn.Embedding(1, transformer_dim)
        self.mask_token = nn.Embedding(1, transformer_dim)
        self.output_upscaling = nn.Sequential(
            nn.ConvTranspose2d(transformer_dim, transformer_dim // 4, kernel_size=2, stride=2),
            LayerNorm2d(transformer_dim // 4),
            nn.GELU(),
            nn.ConvTranspose2d(transformer_dim // 4, transformer_dim // 8, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.output_hypernetwork_mlp = MLP(transformer_dim, transformer_dim, transformer_dim // 8, 3)
        self.iou_prediction_head = MLP(transformer_dim, iou_head_hidden_dim, 1, iou_head_depth)

    def tokens(self, prompt_tokens: torch.Tensor) -> torch.Tensor:
        """Cat(𝐓_token, ℱ_prmt): (K, 2 + n_tokens, D)."""
        output_tokens = torch.cat([self.iou_token.weight, self.mask_token.weight], dim=0)
        output_tokens = output_tokens.unsqueeze(0).expand(prompt_tokens.size(0), -1, -1)
        return torch.cat([output_tokens.to(prompt_tokens.dtype), prompt_tokens], dim=1)

    def forward(self, image_embeddings: torch.Tensor, image_pe: torch.Tensor,
                prompt_tokens: torch.Tensor) -> DecodeOutput:
        """Decode one mask per prompt.

        Args:
            image_embeddings: (K, D, h, w), the image embedding of each prompt's image
            image_pe: (D, h, w) positional encoding
            prompt_tokens: (K, n_tokens, D)
        """
        if prompt_tokens.shape[-1] != self.transformer_dim or image_embeddings.shape[1] != self.transformer_dim:
            raise ShapeError(
                f"decoder width {self.transformer_dim} vs prompts {prompt_tokens.shape[-1]} "
                f"and image embedding {image_embeddings.shape[1]}"
            )
        if len(prompt_tokens) == 0:
            h, w = image_embeddings.shape[-2:]
            empty = image_embeddings.new_zeros((0, 4 * h, 4 * w))
            return DecodeOutput(mask_logits=empty, iou_scores=image_embeddings.new_zeros((0,)))
        tokens = self.tokens(prompt_tokens)
        pos = image_pe.unsqueeze(0).expand(tokens.shape[0], -1, -1, -1).to(image_embeddings.dtype)
        hs, src = self.transformer(image_embeddings, pos, tokens)
        iou_token_out = hs[:, 0, :]
        mask_token_out = hs[:, 1, :]

        b, c, h, w = image_embeddings.shape
        src = src.transpose(1, 2).reshape(b, c, h, w)
        upscaled = self.output_upscaling(src)
        hyper_in = self.output_hypernetwork_mlp(mask_token_out)
        b, c, h, w = upscaled.shape
        masks = (hyper_in.unsqueeze(1) @ upscaled.view(b, c, h * w)).view(b, h, w)
        iou = torch.sigmoid(self.iou_prediction_head(iou_token_out)).squeeze(-1)
        return DecodeOutput(mask_logits=masks, iou_scores=iou)
