"""Tests for GAT reconstruction and the masked-graph distillation loss."""

import math

import pytest
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

from uwkit.exceptions import ConfigError, ShapeError
from uwkit.models.schemas import DistillConfig, EncoderConfig
from uwkit.modeling.encoder import ImageEncoder
from uwkit.modeling.feature_graph import FeatureGraph, build_graph, mask_nodes
from uwkit.modeling.mgukd import (
    Distiller,
    GraphReconstructor,
    distill_step,
    freeze,
    gat_attention,
    gat_reconstruct,
    mgukd_loss,
)


def _full_graph(nodes: torch.Tensor, height: int, width: int) -> FeatureGraph:
    n = height * width
    return FeatureGraph(
        nodes=nodes,
        adjacency=torch.ones(n, n, dtype=torch.bool),
        masked=torch.zeros(n, dtype=torch.bool),
        height=height,
        width=width,
        k=n,
    )


def _hand_gat(slope: float = 0.2) -> GraphReconstructor:
    """Single layer, single head, W = I, f_a = sum of the concatenated pair."""
    gat = GraphReconstructor(2, 2, hidden=2, heads=1, layers=1, slope=slope).double()
    layer = gat.layers[0]
    with torch.no_grad():
        layer.W.weight.copy_(torch.eye(2, dtype=torch.float64))
        layer.att.fill_(1.0)
        layer.att_bias.zero_()
    return gat


class TestGatAttention:
    """Attention weights over a node's neighborhood."""

    def test_singleton_neighborhood(self):
        feature = torch.tensor([[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]], dtype=torch.float64)
        graph = build_graph(feature, k=1)
        weights = gat_attention(graph, 0, _hand_gat())
        assert weights.tolist() == [1.0]

    def test_identical_neighbors_uniform(self):
        feature = torch.tensor([[1.0, 2.0]], dtype=torch.float64).repeat(2, 2, 1)
        weights = gat_attention(_full_graph(feature.reshape(4, 2), 2, 2), 1, _hand_gat())
        torch.testing.assert_close(weights, torch.full((4,), 0.25, dtype=torch.float64))

    def test_three_node_hand_case(self):
        nodes = torch.tensor([[1.0, 2.0], [-3.0, 0.5], [0.25, -1.0]], dtype=torch.float64)
        weights = gat_attention(_full_graph(nodes, 1, 3), 0, _hand_gat(slope=0.2))

        def leaky(x):
            return x if x >= 0 else 0.2 * x

        s = [float(v.sum()) for v in nodes]
        logits = [leaky(s[0] + s[n]) for n in range(3)]
        z = sum(math.exp(v) for v in logits)
        expected = [math.exp(v) / z for v in logits]
        for got, want in zip(weights.tolist(), expected):
            assert abs(got - want) < 1e-9

    def test_weights_are_distribution(self, rng):
        feature = torch.from_numpy(rng.normal(size=(4, 4, 6)))
        graph = mask_nodes(build_graph(feature, k=5), 0.5, seed=0)
        gat = GraphReconstructor(6, 3, hidden=4, heads=2).double()
        for i in range(16):
            for layer in range(2):
                weights = gat_attention(graph, i, gat, layer=layer, head=1)
                assert (weights >= 0).all()
                assert abs(float(weights.sum()) - 1.0) < 1e-6

    def test_node_out_of_range(self):
        graph = build_graph(torch.rand(2, 2, 2), k=1)
        with pytest.raises(IndexError):
            gat_attention(graph, 4, GraphReconstructor(2, 2, hidden=2, heads=1))


class TestGatReconstruct:
    """Output contract and gradients of the reconstructor."""

    def test_output_shape(self):
        graph = mask_nodes(build_graph(torch.rand(3, 5, 8), k=4), 0.65, seed=1)
        assert gat_reconstruct(graph, GraphReconstructor(8, 12, hidden=4, heads=4)).shape == (3, 5, 12)

    def test_batched_output_shape(self):
        graph = build_graph(torch.rand(2, 3, 3, 8), k=4)
        assert gat_reconstruct(graph, GraphReconstructor(8, 5, hidden=4, heads=2)).shape == (2, 3, 3, 5)

    def test_zero_weights_give_zero_output(self):
        gat = GraphReconstructor(4, 6, hidden=3, heads=2)
        with torch.no_grad():
            for layer in gat.layers:
                layer.W.weight.zero_()
        out = gat_reconstruct(build_graph(torch.rand(3, 3, 4), k=2), gat)
        assert torch.equal(out, torch.zeros_like(out))

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            gat_reconstruct(build_graph(torch.rand(2, 2, 5), k=1), GraphReconstructor(4, 4, hidden=2, heads=1))

    def test_gradcheck_parameters(self, rng):
        gat = GraphReconstructor(4, 3, hidden=3, heads=2).double()
        graph = mask_nodes(build_graph(torch.from_numpy(rng.normal(size=(2, 4, 4))), k=3), 0.25, seed=4)
        names = ["layers.0.W.weight", "layers.0.att", "layers.1.W.weight", "layers.1.att"]
        params = dict(gat.named_parameters())
        inputs = tuple(params[n].detach().clone().requires_grad_(True) for n in names)

        def fn(*values):
            return functional_call(gat, dict(zip(names, values)), (graph,)).sum()

        assert gradcheck(fn, inputs, eps=1e-6, atol=1e-4, rtol=1e-3)

    def test_gradcheck_nodes(self, rng):
        gat = GraphReconstructor(3, 2, hidden=2, heads=2).double()
        adjacency = build_graph(torch.from_numpy(rng.normal(size=(2, 4, 3))), k=3).adjacency
        nodes = torch.from_numpy(rng.normal(size=(8, 3))).requires_grad_(True)

        def fn(x):
            graph = FeatureGraph(nodes=x, adjacency=adjacency, masked=torch.zeros(8, dtype=torch.bool),
                                 height=2, width=4, k=3)
            return gat_reconstruct(graph, gat)

        assert gradcheck(fn, (nodes,), eps=1e-6, atol=1e-4, rtol=1e-3)

    def test_overfits_fixed_target(self):
        torch.manual_seed(3)
        feature = torch.randn(4, 4, 8)
        target = 0.5 * (feature @ torch.randn(8, 6)) / math.sqrt(8)
        graph = build_graph(feature, k=1)
        gat = GraphReconstructor(8, 6, hidden=8, heads=2)
        optimizer = torch.optim.Adam(gat.parameters(), lr=1e-2)
        initial = None
        for _ in range(200):
            loss = mgukd_loss([target], [gat_reconstruct(graph, gat)]).loss
            initial = initial if initial is not None else float(loss)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        final = float(mgukd_loss([target], [gat_reconstruct(graph, gat)]).loss)
        assert final <= 0.1 * initial


class TestMgukdLoss:
    """Per-layer MSE and the summed total."""

    def test_identical_maps_zero(self, rng):
        maps = [torch.from_numpy(rng.normal(size=(2, 2, 3))) for _ in range(3)]
        report = mgukd_loss(maps, [m.clone() for m in maps])
        assert report.total == 0.0
        assert report.per_layer == [0.0, 0.0, 0.0]

    def test_constant_offset(self):
        teacher = [torch.full((3, 3, 4), float(i), dtype=torch.float64) for i in range(4)]
        report = mgukd_loss(teacher, [t + 0.5 for t in teacher])
        assert report.per_layer == [0.25] * 4
        assert report.total == 1.0

    def test_brute_force_mean(self, rng):
        t = torch.from_numpy(rng.normal(size=(2, 2, 3)))
        r = torch.from_numpy(rng.normal(size=(2, 2, 3)))
        expected = sum((float(a) - float(b)) ** 2 for a, b in zip(t.flatten(), r.flatten())) / 12
        assert abs(mgukd_loss([t], [r]).total - expected) < 1e-12

    def test_total_is_sum_of_layers(self, rng):
        t = [torch.from_numpy(rng.normal(size=(2, 3, 4))) for _ in range(3)]
        r = [torch.from_numpy(rng.normal(size=(2, 3, 4))) for _ in range(3)]
        report = mgukd_loss(t, r, alpha=2e-5)
        assert report.total == sum(report.per_layer)
        assert report.weighted == 2e-5 * report.total
        assert all(v >= 0 for v in report.per_layer)
        assert abs(float(report.loss) - report.total) < 1e-12

    def test_layer_count_mismatch(self):
        with pytest.raises(ShapeError):
            mgukd_loss([torch.zeros(2, 2, 2)], [])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mgukd_loss([torch.zeros(2, 2, 2)], [torch.zeros(2, 2, 3)])


class TestDistillStep:
    """End-to-end distillation loss on two tiny encoders."""

    @pytest.fixture
    def encoders(self):
        teacher = freeze(ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=4, dim=16, heads=2)))
        student = ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=2, dim=8, heads=2))
        return teacher, student

    def _distiller(self, **overrides):
        config = DistillConfig(tap_layers=(1, 2), k=3, gat_hidden=4, gat_heads=2, **overrides)
        return Distiller(config, student_dim=8, teacher_dim=16, student_depth=2)

    def test_loss_finite_non_negative(self, encoders):
        teacher, student = encoders
        _, report = distill_step(torch.rand(2, 3, 32, 32), teacher, student, self._distiller())
        assert math.isfinite(report.total)
        assert report.total >= 0.0
        assert len(report.per_layer) == 2

    def test_teacher_receives_no_gradient(self, encoders):
        teacher, student = encoders
        distiller = self._distiller()
        _, report = distill_step(torch.rand(2, 3, 32, 32), teacher, student, distiller)
        report.loss.backward()
        assert all(p.grad is None for p in teacher.parameters())
        assert any(p.grad is not None for p in student.parameters())
        assert any(p.grad is not None for p in distiller.parameters())

    def test_seeded_runs_identical(self, encoders):
        teacher, student = encoders
        images = torch.rand(2, 3, 32, 32)
        distiller = self._distiller()
        totals = []
        for _ in range(2):
            generator = torch.Generator().manual_seed(17)
            totals.append(distill_step(images, teacher, student, distiller, generator=generator)[1].per_layer)
        assert totals[0] == totals[1]

    def test_mse_control(self, encoders):
        teacher, student = encoders
        _, report = distill_step(torch.rand(1, 3, 32, 32), teacher, student, self._distiller(method="mse"))
        assert len(report.per_layer) == 2

    def test_shared_gat(self):
        distiller = self._distiller(share_gat=True)
        assert distiller.heads[0] is distiller.heads[1]

    def test_tap_layer_beyond_depth(self):
        with pytest.raises(ConfigError):
            Distiller(DistillConfig(tap_layers=(3,)), student_dim=8, teacher_dim=16, student_depth=2)
