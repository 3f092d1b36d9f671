"""Data models for uwkit."""

from uwkit.models.schemas import (
    StrictModel,
    ChannelRanges,
    SceneConfig,
    EncoderConfig,
    HeadConfig,
    DistillConfig,
    OptimConfig,
    DataConfig,
    RunConfig,
)
from uwkit.models.scene import AnnotatedImage, Instance, SceneSpec

__all__ = [
    "StrictModel",
    "ChannelRanges",
    "SceneConfig",
    "EncoderConfig",
    "HeadConfig",
    "DistillConfig",
    "OptimConfig",
    "DataConfig",
    "RunConfig",
    "AnnotatedImage",
    "Instance",
    "SceneSpec",
]
