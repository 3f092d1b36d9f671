"""Pydantic models for run configuration."""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ChannelRanges(StrictModel):
    """Per-channel (low, high) sampling ranges."""
    red: tuple[float, float]
    green: tuple[float, float]
    blue: tuple[float, float]

    @field_validator("red", "green", "blue")
    @classmethod
    def validate_range(cls, v):
        lo, hi = v
        if lo < 0 or hi < 0:
            raise ValueError("channel range bounds must be non-negative")
        return v

    def as_list(self) -> list[tuple[float, float]]:
        return [self.red, self.green, self.blue]


class SceneConfig(StrictModel):
    image_size: int = Field(128, ge=16, le=2048, description="Square image side in pixels")
    num_classes: int = Field(4, ge=1, le=10, description="Number of instance categories")
    min_instances: int = Field(1, ge=0, description="Minimum instances per scene")
    max_instances: int = Field(6, ge=0, description="Maximum instances per scene")
    cluster_tendency: float = Field(0.6, ge=0.0, le=1.0, description="Probability a new instance joins an existing cluster")
    radius_range: tuple[float, float] = Field((5.0, 18.0), description="Instance radius range in pixels")
    depth_range: tuple[float, float] = Field((0.5, 6.0), description="Scene depth range in meters")
    color_jitter: float = Field(0.06, ge=0.0, le=0.5, description="Within-class color jitter amplitude")
    min_instance_area: int = Field(12, ge=1, description="Smallest visible instance area in pixels")
    beta_d: ChannelRanges = ChannelRanges(red=(0.25, 0.45), green=(0.05, 0.12), blue=(0.03, 0.10))
    beta_b: ChannelRanges = ChannelRanges(red=(0.20, 0.40), green=(0.10, 0.25), blue=(0.10, 0.25))
    veiling: ChannelRanges = ChannelRanges(red=(0.02, 0.10), green=(0.25, 0.45), blue=(0.35, 0.55))


class EncoderConfig(StrictModel):
    image_size: int = Field(128, ge=16, description="Square input side in pixels")
    patch_size: int = Field(16, ge=1, description="Patch side in pixels")
    depth: int = Field(4, ge=1, description="Transformer block count")
    dim: int = Field(64, ge=1, description="Token channel width")
    heads: int = Field(4, ge=1, description="Attention head count")
    mlp_ratio: float = Field(4.0, gt=0.0, description="MLP hidden width as a multiple of dim")
    role: Literal["teacher", "student"] = "student"

    @model_validator(mode="after")
    def validate_divisibility(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        return self

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size


class HeadConfig(StrictModel):
    """EUPG and mask decoder settings."""
    num_classes: int = Field(4, ge=1, description="Foreground categories; background is appended")
    prompt_dim: int = Field(64, ge=4, description="Prompt token and decoder width")
    n_tokens: int = Field(2, ge=1, description="Prompt tokens per instance")
    channel_attention: bool = Field(True, description="Disable to force the channel gate to 1")
    roi_feature: Literal["embedding", "gated"] = Field(
        "embedding", description="Pool prompts from the raw embedding or from the channel-gated one"
    )
    channel_reduction: int = Field(4, ge=1, description="Squeeze ratio of the channel attention")
    upsample_mode: Literal["bilinear", "transposed"] = "bilinear"
    anchor_sizes_2x: tuple[float, ...] = (32.0, 64.0, 128.0)
    anchor_sizes_4x: tuple[float, ...] = (8.0, 16.0, 32.0)
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    rpn_pos_iou: float = Field(0.7, gt=0.0, le=1.0)
    rpn_neg_iou: float = Field(0.3, ge=0.0, lt=1.0)
    rpn_batch_per_image: int = Field(256, ge=1)
    rpn_pos_fraction: float = Field(0.5, gt=0.0, le=1.0)
    nms_iou: float = Field(0.7, gt=0.0, le=1.0)
    pre_nms_top_n: int = Field(1000, ge=1)
    post_nms_top_n_train: int = Field(300, ge=1)
    post_nms_top_n_test: int = Field(100, ge=1)
    proposals_per_image: int = Field(64, ge=1, description="Sampled proposals per training image")
    proposal_pos_fraction: float = Field(0.25, gt=0.0, le=1.0)
    proposal_match_iou: float = Field(0.5, gt=0.0, le=1.0)
    roi_size: int = Field(14, ge=1)
    roi_conv_channels: int = Field(16, ge=1)
    mlp_hidden: int = Field(256, ge=1)
    decoder_depth: int = Field(2, ge=1)
    decoder_heads: int = Field(4, ge=1)
    decoder_mlp_dim: int = Field(128, ge=1)
    score_threshold: float = Field(0.05, ge=0.0, le=1.0)
    class_nms_iou: float = Field(0.5, gt=0.0, le=1.0)
    detections_per_image: int = Field(100, ge=1)

    @model_validator(mode="after")
    def validate_widths(self):
        if self.prompt_dim % 8:
            raise ValueError("prompt_dim must be divisible by 8 (mask upscaling)")
        if self.prompt_dim % 4:
            raise ValueError("prompt_dim must be divisible by 4 (positional encoding)")
        if (self.prompt_dim // 2) % self.decoder_heads:
            raise ValueError("prompt_dim / 2 must be divisible by decoder_heads (cross attention)")
        if self.rpn_neg_iou > self.rpn_pos_iou:
            raise ValueError("rpn_neg_iou must not exceed rpn_pos_iou")
        return self


class DistillConfig(StrictModel):
    method: Literal["mgukd", "mse", "none"] = "mgukd"
    tap_layers: tuple[int, ...] = Field((1, 2, 3, 4), description="1-indexed student layers to align")
    k: int = Field(11, ge=1, description="Neighbor rank of the dynamic similarity threshold")
    mask_ratio: float = Field(0.65, ge=0.0, le=1.0)
    alpha: float = Field(2e-5, ge=0.0, description="Weight of the distillation loss")
    gat_layers: int = Field(2, ge=1)
    gat_heads: int = Field(4, ge=1)
    gat_hidden: int = Field(32, ge=1, description="Per-head width of the hidden GAT layers")
    leaky_slope: float = Field(0.2, ge=0.0)
    output_activation: Literal["elu", "leaky_relu", "identity"] = "elu"
    share_gat: bool = Field(False, description="One GAT for every tap layer instead of one per layer")


class OptimConfig(StrictModel):
    lr: float = Field(2e-4, gt=0.0)
    weight_decay: float = Field(5e-2, ge=0.0)
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(4, ge=1)
    max_steps: int | None = Field(None, ge=1, description="Stop after this many steps regardless of epochs")
    log_every: int = Field(10, ge=1)


class DataConfig(StrictModel):
    source: Literal["synthetic", "coco"] = "synthetic"
    corpus: str | None = Field(None, description="Corpus directory holding annotations.json and images/")
    annotations: str | None = Field(None, description="COCO annotation file (source=coco)")
    image_root: str | None = Field(None, description="Image directory (source=coco)")
    num_images: int = Field(128, ge=0, description="Synthetic scenes to generate when no corpus is given")
    holdout_fraction: float = Field(0.0, ge=0.0, lt=1.0, description="Share of images (highest ids) held out of training")
    scene: SceneConfig = SceneConfig()


class RunConfig(StrictModel):
    seed: int = Field(0, ge=0)
    data: DataConfig = DataConfig()
    teacher_encoder: EncoderConfig = EncoderConfig(depth=8, dim=128, heads=4, role="teacher")
    student_encoder: EncoderConfig = EncoderConfig(depth=4, dim=64, heads=4, role="student")
    head: HeadConfig = HeadConfig()
    distill: DistillConfig = DistillConfig()
    optim: OptimConfig = OptimConfig()
    augment: bool = Field(True, description="Random flip/scale/crop during training")
    output_dir: str = "runs/default"
