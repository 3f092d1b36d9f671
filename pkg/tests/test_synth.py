"""Tests for the synthetic scene generator and SeaThru degradation."""

import math

import numpy as np
import pytest

from uwkit.data.synth import degrade, generate_scene, synthesize, validate_scene_config
from uwkit.exceptions import ConfigError, ShapeError
from uwkit.models.scene import SceneSpec, mask_to_bbox
from uwkit.models.schemas import SceneConfig


def _scene(clean, depth, beta_d=(0.5, 0.1, 0.1), beta_b=(0.3, 0.2, 0.2), veiling=(0.2, 0.4, 0.5)):
    return SceneSpec(
        clean_image=np.asarray(clean, dtype=np.float64),
        depth=np.asarray(depth, dtype=np.float64),
        beta_d=np.asarray(beta_d, dtype=np.float64),
        beta_b=np.asarray(beta_b, dtype=np.float64),
        veiling=np.asarray(veiling, dtype=np.float64),
    )


class TestDegrade:
    def test_zero_depth_is_identity(self, rng):
        clean = rng.random((8, 8, 3))
        out = degrade(_scene(clean, np.zeros((8, 8))))
        np.testing.assert_array_equal(out.image, clean)

    def test_scalar_golden_value(self):
        out = degrade(_scene(np.full((1, 1, 3), 0.8), np.full((1, 1), 2.0)))
        expected = 0.8 * math.exp(-0.5 * 2.0) + 0.2 * (1 - math.exp(-0.3 * 2.0))
        assert abs(out.image[0, 0, 0] - expected) < 1e-12
        assert abs(out.image[0, 0, 0] - 0.3845413) < 1e-6

    def test_large_depth_converges_to_veiling_light(self):
        veiling = (0.2, 0.4, 0.5)
        out = degrade(_scene(np.full((2, 2, 3), 0.9), np.full((2, 2), 1e6),
                             beta_d=(0.5, 0.5, 0.5), beta_b=(0.5, 0.5, 0.5), veiling=veiling))
        np.testing.assert_allclose(out.image, np.broadcast_to(veiling, (2, 2, 3)), atol=1e-6)

    def test_monotone_toward_veiling_light(self, rng):
        clean = rng.random((1, 1, 3))
        veiling = np.array([0.2, 0.4, 0.5])
        gaps = []
        for z in np.linspace(0.0, 20.0, 41):
            out = degrade(_scene(clean, np.full((1, 1), z), beta_d=(0.4, 0.1, 0.05),
                                 beta_b=(0.4, 0.1, 0.05), veiling=veiling))
            gaps.append(np.abs(out.image[0, 0] - veiling))
        gaps = np.stack(gaps)
        assert (np.diff(gaps, axis=0) <= 1e-12).all()

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            degrade(_scene(np.zeros((4, 4, 3)), np.zeros((4, 5))))

    @pytest.mark.parametrize("field, value", [
        ("clean_image", np.full((2, 2, 3), 1.5)),
        ("clean_image", np.full((2, 2, 3), -0.1)),
        ("veiling", np.array([0.2, 1.2, 0.5])),
        ("veiling", np.array([0.2, -0.01, 0.5])),
    ])
    def test_out_of_range_radiance_rejected(self, field, value):
        scene = _scene(np.full((2, 2, 3), 0.5), np.ones((2, 2)))
        setattr(scene, field, value)
        with pytest.raises(ValueError, match=field):
            degrade(scene)

    def test_unit_range_bounds_accepted(self):
        out = degrade(_scene(np.ones((2, 2, 3)), np.ones((2, 2)), veiling=(0.0, 1.0, 1.0)))
        assert out.image.shape == (2, 2, 3)

    def test_output_clamped(self):
        out = degrade(_scene(np.ones((2, 2, 3)), np.full((2, 2), 1.0), beta_d=(0, 0, 0), veiling=(1, 1, 1)))
        assert out.image.max() <= 1.0


class TestGenerateScene:
    def test_same_seed_identical(self, tiny_scene_config):
        a = generate_scene(11, tiny_scene_config)
        b = generate_scene(11, tiny_scene_config)
        assert a.fingerprint() == b.fingerprint()
        np.testing.assert_array_equal(a.clean_image, b.clean_image)

    def test_forced_instance_count(self):
        config = SceneConfig(image_size=128, min_instances=5, max_instances=5)
        scene = generate_scene(3, config)
        assert len(scene.instances) == 5

    def test_empty_instance_range_rejected(self):
        config = SceneConfig(min_instances=4, max_instances=2)
        with pytest.raises(ConfigError):
            validate_scene_config(config)

    def test_red_attenuation_strictly_highest(self, tiny_scene_config):
        for seed in range(10):
            scene = generate_scene(seed, tiny_scene_config)
            assert scene.beta_d[0] > scene.beta_d[1]
            assert scene.beta_d[0] > scene.beta_d[2]

    def test_bboxes_are_tight(self, tiny_scene_config):
        for seed in range(5):
            for inst in generate_scene(seed, tiny_scene_config).instances:
                assert inst.bbox == mask_to_bbox(inst.mask)
                assert 0 <= inst.class_id < tiny_scene_config.num_classes

    def test_channel_values_in_unit_range(self, tiny_scene_config):
        scene = generate_scene(5, tiny_scene_config)
        assert scene.clean_image.min() >= 0.0
        assert scene.clean_image.max() <= 1.0


class TestSynthesize:
    def test_ids_and_file_names(self, tiny_scene_config):
        items = [item for _, item in synthesize(3, 0, tiny_scene_config)]
        assert [i.image_id for i in items] == [1, 2, 3]
        assert [i.file_name for i in items] == ["000000.png", "000001.png", "000002.png"]

    def test_zero_images(self, tiny_scene_config):
        assert synthesize(0, 0, tiny_scene_config) == []

    @pytest.mark.slow
    def test_red_channel_darkest_over_corpus(self):
        config = SceneConfig(image_size=64, max_instances=4, radius_range=(4.0, 10.0))
        images = np.stack([item.image for _, item in synthesize(200, 0, config)])
        mean = images.reshape(-1, 3).mean(axis=0)
        assert mean[0] < mean[1]
        assert mean[0] < mean[2]
