"""Masked-graph knowledge distillation.

Student tap maps become similarity graphs, a share of their nodes is zeroed,
and a graph attention network rebuilds every node at teacher width. The
reconstruction is pulled toward the frozen teacher's features with a
per-layer MSE summed over tap layers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from uwkit.exceptions import ShapeError
from uwkit.models.schemas import DistillConfig
from uwkit.modeling.encoder import LayerTapOutput, tap_pairs, validate_tap_layers
from uwkit.modeling.feature_graph import FeatureGraph, build_graph, mask_nodes

logger = logging.getLogger(__name__)


class GATLayer(nn.Module):
    """One multi-head graph attention layer over a dense adjacency.

    For head h: e_ij = LeakyReLU(f_a(W h_i ∥ W h_j)) with f_a linear on the
    concatenated pair, a_ij = softmax over j ∈ 𝒩ᵢ, out_i = Σ_j a_ij W h_j.
    Heads are concatenated (``concat=True``) or averaged.
    """

    def __init__(self, in_dim: int, out_dim: int, heads: int, concat: bool, slope: float = 0.2):
        super().__init__()
        self.in_dim, self.out_dim, self.heads = in_dim, out_dim, heads
        self.concat = concat
        self.slope = slope
        self.W = nn.Linear(in_dim, heads * out_dim, bias=False)
        # f_a: (2·out_dim -> 1) per head, first half scores node i, second half node j
        self.att = nn.Parameter(torch.empty(heads, 2 * out_dim))
        self.att_bias = nn.Parameter(torch.zeros(heads))
        self.bias = nn.Parameter(torch.zeros(heads * out_dim if concat else out_dim))
        nn.init.xavier_uniform_(self.W.weight)
        nn.init.xavier_uniform_(self.att)

    def project(self, h: torch.Tensor) -> torch.Tensor:
        """(B, N, in) -> (B, heads, N, out)."""
        if h.shape[-1] != self.in_dim:
            raise ShapeError(f"GAT layer expects node width {self.in_dim}, got {h.shape[-1]}")
        B, N, _ = h.shape
        return self.W(h).view(B, N, self.heads, self.out_dim).transpose(1, 2)

    def attention(self, wh: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        """Attention probabilities (B, heads, N, N); zero outside the neighborhood."""
        a_i = self.att[:, :self.out_dim].view(1, self.heads, 1, self.out_dim)
        a_j = self.att[:, self.out_dim:].view(1, self.heads, 1, self.out_dim)
        score_i = (wh * a_i).sum(-1)
        score_j = (wh * a_j).sum(-1)
        logits = score_i.unsqueeze(-1) + score_j.unsqueeze(-2) + self.att_bias.view(1, -1, 1, 1)
        logits = F.leaky_relu(logits, self.slope)
        logits = logits.masked_fill(~adjacency.unsqueeze(1), float("-inf"))
        return torch.softmax(logits, dim=-1)

    def forward(self, h: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        wh = self.project(h)
        out = self.attention(wh, adjacency) @ wh
        if self.concat:
            B, _, N, _ = out.shape
            out = out.transpose(1, 2).reshape(B, N, self.heads * self.out_dim)
        else:
            out = out.mean(dim=1)
        return out + self.bias


class GraphReconstructor(nn.Module):
    """Stacked GAT layers mapping student-width nodes to teacher width.

    Hidden layers concatenate heads and apply LeakyReLU; the final layer
    averages heads and applies the configured output activation.
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 32, heads: int = 4, layers: int = 2,
                 slope: float = 0.2, output_activation: str = "elu"):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.slope = slope
        self.output_activation = output_activation
        dims = [in_dim] + [hidden * heads] * (layers - 1)
        stack = [GATLayer(d, hidden, heads, concat=True, slope=slope) for d in dims[:-1]]
        stack.append(GATLayer(dims[-1], out_dim, heads, concat=False, slope=slope))
        self.layers = nn.ModuleList(stack)

    def _activate(self, x: torch.Tensor, final: bool) -> torch.Tensor:
        if final and self.output_activation == "elu":
            return F.elu(x)
        if final and self.output_activation == "identity":
            return x
        return F.leaky_relu(x, self.slope)

    def hidden_states(self, graph: FeatureGraph, upto: int) -> torch.Tensor:
        """Node features entering layer ``upto`` (0-indexed), as (B, N, C)."""
        h = graph.masked_nodes()
        adjacency = graph.adjacency
        if not graph.batched:
            h, adjacency = h.unsqueeze(0), adjacency.unsqueeze(0)
        for index, layer in enumerate(self.layers[:upto]):
            h = self._activate(layer(h, adjacency), final=index == len(self.layers) - 1)
        return h

    def forward(self, graph: FeatureGraph) -> torch.Tensor:
        """ℱ̂: (…, h, w, out_dim) with the graph's batch layout."""
        if graph.channels != self.in_dim:
            raise ShapeError(f"graph nodes have width {graph.channels}, reconstructor expects {self.in_dim}")
        out = self.hidden_states(graph, len(self.layers))
        out = out.view(out.shape[0], graph.height, graph.width, self.out_dim)
        return out if graph.batched else out[0]


def gat_attention(graph: FeatureGraph, i: int, gat: GraphReconstructor, layer: int = 0, head: int = 0,
                  batch: int = 0) -> torch.Tensor:
    """Attention weights of node ``i`` over 𝒩ᵢ (ascending neighbor index) for one layer/head."""
    if not 0 <= i < graph.num_nodes:
        raise IndexError(f"node {i} outside [0, {graph.num_nodes})")
    gat_layer = gat.layers[layer]
    h = gat.hidden_states(graph, layer)
    adjacency = graph.adjacency if graph.batched else graph.adjacency.unsqueeze(0)
    weights = gat_layer.attention(gat_layer.project(h), adjacency)
    row = weights[batch, head, i]
    return row[adjacency[batch, i]]


def gat_reconstruct(graph: FeatureGraph, gat: GraphReconstructor) -> torch.Tensor:
    return gat(graph)


@dataclass
class DistillLossReport:
    """Per-layer MSE values, their sum and the α-weighted contribution.

    Floats are for logging (``total`` is the exact Python sum of
    ``per_layer``); ``loss`` is the differentiable total.
    """
    per_layer: list[float]
    total: float
    alpha: float
    loss: torch.Tensor = field(repr=False)

    @property
    def weighted(self) -> float:
        return self.alpha * self.total

    @classmethod
    def zero(cls, alpha: float = 0.0) -> DistillLossReport:
        return cls(per_layer=[], total=0.0, alpha=alpha, loss=torch.zeros(()))


def mgukd_loss(teacher_taps: list[torch.Tensor], reconstructed: list[torch.Tensor], alpha: float = 2e-5) -> DistillLossReport:
    """Σ_l MSE(ℱ_t^l, ℱ̂_s^l); each MSE averages over every element of the layer."""
    if len(teacher_taps) != len(reconstructed):
        raise ShapeError(f"{len(teacher_taps)} teacher taps vs {len(reconstructed)} reconstructed maps")
    losses = []
    for layer, (t, r) in enumerate(zip(teacher_taps, reconstructed)):
        if t.shape != r.shape:
            raise ShapeError(f"tap {layer}: teacher map {tuple(t.shape)} vs reconstruction {tuple(r.shape)}")
        losses.append(F.mse_loss(r, t.detach()))
    per_layer = [float(v.detach()) for v in losses]
    loss = torch.stack(losses).sum() if losses else torch.zeros(())
    return DistillLossReport(per_layer=per_layer, total=float(sum(per_layer)), alpha=alpha, loss=loss)


class Distiller(nn.Module):
    """Distillation head for one student/teacher pair.

    ``method="mgukd"`` builds and masks graphs on the student taps and
    reconstructs them with GATs; ``method="mse"`` is a per-layer linear
    projection of the raw student taps with no graph and no masking.
    """

    def __init__(self, config: DistillConfig, student_dim: int, teacher_dim: int, student_depth: int):
        super().__init__()
        validate_tap_layers(config.tap_layers, student_depth)
        self.config = config
        self.tap_layers = sorted(set(config.tap_layers))
        n_taps = len(self.tap_layers)
        if config.method == "mgukd":
            def make():
                return GraphReconstructor(
                    student_dim, teacher_dim, hidden=config.gat_hidden, heads=config.gat_heads,
                    layers=config.gat_layers, slope=config.leaky_slope,
                    output_activation=config.output_activation,
                )
            shared = make() if config.share_gat else None
            self.heads = nn.ModuleList([shared if shared is not None else make() for _ in range(n_taps)])
        elif config.method == "mse":
            self.heads = nn.ModuleList([nn.Linear(student_dim, teacher_dim) for _ in range(n_taps)])
        else:
            raise ValueError(f"no distillation head for method '{config.method}'")

    def reconstruct(self, student_maps: list[torch.Tensor], generator: torch.Generator | None = None) -> list[torch.Tensor]:
        if self.config.method == "mse":
            return [head(feature) for head, feature in zip(self.heads, student_maps)]
        out = []
        for head, feature in zip(self.heads, student_maps):
            graph = build_graph(feature, self.config.k)
            graph = mask_nodes(graph, self.config.mask_ratio, generator=generator)
            out.append(head(graph))
        return out

    def forward(self, student: LayerTapOutput, teacher: LayerTapOutput,
                generator: torch.Generator | None = None) -> DistillLossReport:
        pairs = tap_pairs(teacher, student, self.tap_layers)
        reconstructed = self.reconstruct([s for _, s in pairs], generator=generator)
        return mgukd_loss([t for t, _ in pairs], reconstructed, alpha=self.config.alpha)


def distill_step(images: torch.Tensor, teacher_encoder: nn.Module, student_encoder: nn.Module,
                 distiller: Distiller, generator: torch.Generator | None = None) -> tuple[LayerTapOutput, DistillLossReport]:
    """Encode with both models and compute the distillation loss.

    The teacher runs without gradient. Returns the student taps (input to the
    task heads) and the distillation report.
    """
    with torch.no_grad():
        teacher_taps = teacher_encoder(images)
    student_taps = student_encoder(images)
    return student_taps, distiller(student_taps, teacher_taps, generator=generator)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()
