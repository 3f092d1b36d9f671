"""Tests for the ViT encoder and the teacher/student tap mapping."""

import numpy as np
import pytest
import torch
from torch.autograd import gradcheck
from torch.func import functional_call

from uwkit.exceptions import ConfigError, ShapeError
from uwkit.modeling.encoder import ImageEncoder, LayerTapOutput, encode, tap_pairs, teacher_layer_for
from uwkit.models.schemas import EncoderConfig


def _taps(depth: int, dim: int = 4, grid: int = 2) -> LayerTapOutput:
    return LayerTapOutput(maps=[torch.full((1, grid, grid, dim), float(i + 1)) for i in range(depth)])


class TestImageEncoder:
    """Shapes, attention normalization and gradients."""

    def test_feature_map_grid(self):
        encoder = ImageEncoder(EncoderConfig(image_size=64, patch_size=16, depth=3, dim=8, heads=2))
        taps = encoder(torch.rand(2, 3, 64, 64))
        assert taps.depth == 3
        for feature in taps.maps:
            assert feature.shape == (2, 4, 4, 8)

    def test_attention_rows_sum_to_one(self):
        encoder = ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=2, dim=8, heads=2))
        taps = encoder(torch.rand(1, 3, 32, 32), return_attention=True)
        for attn in taps.attentions:
            assert attn.shape == (1, 2, 16, 16)
            torch.testing.assert_close(attn.sum(-1), torch.ones(1, 2, 16), atol=1e-6, rtol=0)

    def test_wrong_input_size(self):
        encoder = ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=1, dim=8, heads=2))
        with pytest.raises(ShapeError):
            encoder(torch.rand(1, 3, 48, 48))

    def test_encode_numpy_image(self):
        encoder = ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=1, dim=8, heads=2))
        taps = encode(np.random.default_rng(0).random((32, 32, 3)).astype(np.float32), encoder)
        assert taps.final.shape == (1, 4, 4, 8)

    def test_encode_rejects_channels_first(self):
        encoder = ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=1, dim=8, heads=2))
        with pytest.raises(ShapeError):
            encode(torch.rand(3, 32, 32), encoder)

    def test_batch_permutation_equivariant(self):
        encoder = ImageEncoder(EncoderConfig(image_size=32, patch_size=8, depth=2, dim=8, heads=2)).eval()
        images = torch.rand(3, 3, 32, 32)
        perm = torch.tensor([2, 0, 1])
        with torch.no_grad():
            a = encoder(images).final
            b = encoder(images[perm]).final
        torch.testing.assert_close(b, a[perm], atol=1e-5, rtol=1e-5)

    def test_gradcheck(self):
        encoder = ImageEncoder(EncoderConfig(image_size=16, patch_size=8, depth=2, dim=8, heads=2)).double()
        images = torch.rand(1, 3, 16, 16, dtype=torch.float64, requires_grad=True)
        assert gradcheck(lambda x: encoder(x).final, (images,), eps=1e-6, atol=1e-4, rtol=1e-3)

    def test_gradcheck_parameters(self):
        encoder = ImageEncoder(EncoderConfig(image_size=16, patch_size=8, depth=2, dim=4, heads=2, mlp_ratio=2.0))
        encoder = encoder.double()
        images = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        names = [name for name, _ in encoder.named_parameters()]
        groups = {"patch_embed", "pos_embed", "norm1", "attn.qkv", "attn.proj", "norm2", "mlp.lin1", "mlp.lin2"}
        assert all(any(group in name for name in names) for group in groups)
        params = dict(encoder.named_parameters())
        inputs = tuple(params[n].detach().clone().requires_grad_(True) for n in names)
        weights = [torch.randn(1, 2, 2, 4, dtype=torch.float64) for _ in range(2)]

        def fn(*values):
            taps = functional_call(encoder, dict(zip(names, values)), (images,))
            return sum((m * w).sum() for m, w in zip(taps.maps, weights))

        assert gradcheck(fn, inputs, eps=1e-6, atol=1e-4, rtol=1e-3)


class TestTapMapping:
    """Student-to-teacher layer pairing."""

    def test_equal_depth_identity(self):
        assert [teacher_layer_for(l, 12, 12) for l in (3, 6, 9, 12)] == [3, 6, 9, 12]

    def test_deeper_teacher(self):
        assert teacher_layer_for(6, 24, 12) == 12
        assert teacher_layer_for(12, 24, 12) == 24

    def test_half_rounds_up_and_clamps(self):
        assert teacher_layer_for(1, 3, 2) == 2
        assert teacher_layer_for(1, 1, 4) == 1

    def test_pairs_sorted_and_mapped(self):
        pairs = tap_pairs(_taps(4), _taps(2), [2, 1])
        assert [(t[0, 0, 0, 0].item(), s[0, 0, 0, 0].item()) for t, s in pairs] == [(2.0, 1.0), (4.0, 2.0)]

    def test_empty_layers(self):
        with pytest.raises(ConfigError):
            tap_pairs(_taps(2), _taps(2), [])

    def test_layer_beyond_depth(self):
        with pytest.raises(ConfigError):
            tap_pairs(_taps(2), _taps(2), [3])
