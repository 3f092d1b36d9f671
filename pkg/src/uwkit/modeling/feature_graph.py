"""Similarity graphs over feature-map tokens, and random node masking.

Each token of an h×w×c map is a node. Node n is a neighbor of node i when
cos(Hᵢ, Hₙ) is at least the k-th largest similarity in row i (self included,
ties kept), so every node has at least k neighbors and always itself.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import torch

logger = logging.getLogger(__name__)

EPS = 1e-8


@dataclass(frozen=True)
class FeatureGraph:
    """Nodes (..., N, C), adjacency (..., N, N) with ``adjacency[i, n]`` meaning n ∈ 𝒩ᵢ, mask flags (..., N).

    A leading batch axis is optional; single-graph accessors take ``batch``.
    """
    nodes: torch.Tensor
    adjacency: torch.Tensor
    masked: torch.Tensor
    height: int
    width: int
    k: int

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    @property
    def channels(self) -> int:
        return int(self.nodes.shape[-1])

    @property
    def batched(self) -> bool:
        return self.nodes.ndim == 3

    def _row(self, tensor: torch.Tensor, batch: int) -> torch.Tensor:
        return tensor[batch] if self.batched else tensor

    def neighbors(self, i: int, batch: int = 0) -> list[int]:
        return torch.nonzero(self._row(self.adjacency, batch)[i]).flatten().tolist()

    def masked_indices(self, batch: int = 0) -> list[int]:
        return torch.nonzero(self._row(self.masked, batch)).flatten().tolist()

    def masked_nodes(self) -> torch.Tensor:
        """H̄: node features with masked rows replaced by zeros."""
        return self.nodes.masked_fill(self.masked.unsqueeze(-1), 0.0)

    def to_json(self, batch: int = 0) -> str:
        """Adjacency list per node, for inspection."""
        adjacency = self._row(self.adjacency, batch)
        return json.dumps({
            "height": self.height,
            "width": self.width,
            "k": self.k,
            "masked": self.masked_indices(batch),
            "neighbors": [torch.nonzero(row).flatten().tolist() for row in adjacency],
        })


def cosine_similarity_matrix(nodes: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Pairwise cosine similarity with denominators clamped at ``eps``.

    Non-zero nodes have self-similarity exactly 1; zero nodes are 0 to everything.
    """
    norms = nodes.norm(dim=-1)
    dots = nodes @ nodes.transpose(-2, -1)
    denom = (norms.unsqueeze(-1) * norms.unsqueeze(-2)).clamp_min(eps)
    sim = (dots / denom).clamp(-1.0, 1.0)
    diag = torch.where(norms > 0, torch.ones_like(norms), torch.zeros_like(norms))
    return sim.diagonal_scatter(diag, dim1=-2, dim2=-1)


def build_graph(feature: torch.Tensor, k: int = 11) -> FeatureGraph:
    """Graph over an (h, w, c) or (B, h, w, c) feature map; no nodes are masked.

    The topology is computed without gradient; ``nodes`` keeps the autograd
    history of ``feature``.
    """
    if feature.ndim not in (3, 4):
        raise ValueError(f"expected (h, w, c) or (B, h, w, c), got shape {tuple(feature.shape)}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    h, w, c = feature.shape[-3:]
    n = h * w
    if k > n:
        logger.warning(f"k={k} exceeds the {n} nodes of a {h}x{w} map; clamping to {n}")
        k = n
    nodes = feature.reshape(*feature.shape[:-3], n, c)
    with torch.no_grad():
        sim = cosine_similarity_matrix(nodes.detach())
        theta = sim.topk(k, dim=-1).values[..., -1:]
        adjacency = sim >= theta
    masked = torch.zeros(nodes.shape[:-1], dtype=torch.bool, device=nodes.device)
    return FeatureGraph(nodes=nodes, adjacency=adjacency, masked=masked, height=h, width=w, k=k)


def mask_count(ratio: float, num_nodes: int) -> int:
    """floor(ratio · num_nodes), robust to float representation of the ratio."""
    return min(num_nodes, int(math.floor(ratio * num_nodes + 1e-9)))


def mask_nodes(graph: FeatureGraph, ratio: float, seed: int | None = None,
               generator: torch.Generator | None = None) -> FeatureGraph:
    """Mask exactly floor(ratio·N) nodes per graph, chosen uniformly without replacement.

    Pass either ``seed`` or a ``generator``; the topology is left unchanged.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(0 if seed is None else seed)
    n = graph.num_nodes
    count = mask_count(ratio, n)
    batch = graph.nodes.shape[0] if graph.batched else 1
    masked = torch.zeros(batch, n, dtype=torch.bool)
    for b in range(batch):
        chosen = torch.randperm(n, generator=generator)[:count]
        masked[b, chosen] = True
    masked = masked.to(graph.nodes.device)
    return replace(graph, masked=masked if graph.batched else masked[0])
