from dataclasses import asdict, dataclass, field


@dataclass
class EvalResult:
    bbox_map: float
    bbox_ap50: float
    bbox_ap75: float
    segm_map: float
    segm_ap50: float
    segm_ap75: float
    segm_aps: float
    segm_apm: float
    segm_apl: float
    num_images: int = 0
    num_parameters: int | None = None
    encoder_parameters: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DatasetStats:
    num_images: int
    num_instances: int
    instances_per_class: dict[str, int]
    size_buckets: dict[str, int]
    instances_per_image: dict[int, int]
    channel_mean: list[float]
    channel_std: list[float]
    channel_density: list[list[float]]
    bin_edges: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthResult:
    output_dir: str
    num_images: int
    num_instances: int
    seed: int


@dataclass
class TrainSummary:
    output_dir: str
    role: str
    steps: int
    epochs: int
    final_loss: float
    checkpoint: str
    log_path: str
    num_parameters: int
    resumed_from_step: int | None = None


@dataclass
class Detection:
    category_id: int
    category: str
    score: float
    bbox: list[float]
    area: int
    iou_score: float


@dataclass
class InferResult:
    image: str
    detections: list[Detection]
    overlay_path: str | None = None
    results_path: str | None = None


@dataclass
class VariantScores:
    name: str
    segm_map: list[float] = field(default_factory=list)
    bbox_map: list[float] = field(default_factory=list)
    feature_alignment: list[float] = field(default_factory=list)


@dataclass
class BenchmarkResult:
    output_dir: str
    seeds: list[int]
    variants: dict[str, dict[str, float]]
    checks: dict[str, float | bool] = field(default_factory=dict)
