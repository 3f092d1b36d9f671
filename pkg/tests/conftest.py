"""Shared fixtures: a tiny run configuration and small synthetic corpora."""

import numpy as np
import pytest
import torch

from uwkit.data.corpus import Corpus
from uwkit.data.synth import synthesize
from uwkit.models.schemas import HeadConfig, RunConfig, SceneConfig
from uwkit.services.training_service import LAST_CHECKPOINT, TrainingService

TINY_CONFIG = {
    "seed": 0,
    "data": {
        "num_images": 4,
        "scene": {
            "image_size": 32,
            "num_classes": 2,
            "min_instances": 1,
            "max_instances": 2,
            "radius_range": [3.0, 6.0],
            "min_instance_area": 6,
        },
    },
    "teacher_encoder": {"image_size": 32, "patch_size": 8, "depth": 2, "dim": 32, "heads": 2, "role": "teacher"},
    "student_encoder": {"image_size": 32, "patch_size": 8, "depth": 2, "dim": 16, "heads": 2, "role": "student"},
    "head": {
        "num_classes": 2,
        "prompt_dim": 16,
        "decoder_heads": 2,
        "decoder_mlp_dim": 32,
        "mlp_hidden": 32,
        "roi_conv_channels": 4,
        "roi_size": 7,
        "anchor_sizes_2x": [8.0, 16.0, 32.0],
        "anchor_sizes_4x": [4.0, 8.0, 16.0],
        "pre_nms_top_n": 200,
        "post_nms_top_n_train": 50,
        "post_nms_top_n_test": 20,
        "proposals_per_image": 16,
    },
    "distill": {"tap_layers": [1, 2], "k": 3, "gat_hidden": 8, "gat_heads": 2},
    "optim": {"batch_size": 2, "epochs": 1, "log_every": 1},
}


@pytest.fixture
def tiny_config() -> RunConfig:
    return RunConfig.model_validate(TINY_CONFIG)


@pytest.fixture
def tiny_scene_config() -> SceneConfig:
    return SceneConfig.model_validate(TINY_CONFIG["data"]["scene"])


@pytest.fixture
def head_config() -> HeadConfig:
    return HeadConfig.model_validate(TINY_CONFIG["head"])


@pytest.fixture
def tiny_items(tiny_scene_config):
    return [item for _, item in synthesize(4, 7, tiny_scene_config)]


@pytest.fixture
def corpus(tiny_items) -> Corpus:
    return Corpus(tiny_items, ["fish", "coral"], [1, 2], "synthetic")


@pytest.fixture
def teacher_checkpoint(tiny_config, corpus, tmp_path):
    """A teacher trained for one step on the tiny corpus."""
    config = tiny_config.model_copy(update={"optim": tiny_config.optim.model_copy(update={"max_steps": 1})})
    TrainingService(config, tmp_path / "teacher", corpus).train_teacher()
    return tmp_path / "teacher" / LAST_CHECKPOINT


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    yield
