"""Model construction from a RunConfig."""

import logging
from typing import Literal

import torch
import torch.nn as nn

from uwkit.models.schemas import EncoderConfig, HeadConfig, RunConfig
from uwkit.modeling.mgukd import Distiller
from uwkit.modeling.uwsam import UWSAM
from uwkit.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

Role = Literal["teacher", "student"]


def encoder_config_for(config: RunConfig, role: Role) -> EncoderConfig:
    encoder = config.teacher_encoder if role == "teacher" else config.student_encoder
    if encoder.image_size != config.data.scene.image_size and config.data.source == "synthetic":
        logger.warning(
            f"{role} encoder expects {encoder.image_size}px inputs; synthetic scenes are "
            f"{config.data.scene.image_size}px and will be letterboxed"
        )
    return encoder


def head_config_for(config: RunConfig, num_classes: int | None = None) -> HeadConfig:
    if num_classes is None or num_classes == config.head.num_classes:
        return config.head
    logger.info(f"Dataset has {num_classes} categories; overriding head.num_classes={config.head.num_classes}")
    return config.head.model_copy(update={"num_classes": num_classes})


def build_model(config: RunConfig, role: Role, num_classes: int | None = None) -> UWSAM:
    """Initialise a model from the seed stream for ``role`` without touching the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(config.seed, "init", role))
        model = UWSAM(encoder_config_for(config, role), head_config_for(config, num_classes))
    logger.info(f"Built {role} model: {count_parameters(model):,} parameters "
                f"({count_parameters(model.encoder):,} in the encoder)")
    return model


def build_distiller(config: RunConfig) -> Distiller | None:
    """Distillation head for the student/teacher pair, or None for method 'none'."""
    if config.distill.method == "none":
        return None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(config.seed, "init", "distiller"))
        return Distiller(
            config.distill,
            student_dim=config.student_encoder.dim,
            teacher_dim=config.teacher_encoder.dim,
            student_depth=config.student_encoder.depth,
        )


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)
