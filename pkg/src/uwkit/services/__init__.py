"""Business logic services for uwkit."""

from uwkit.services.checkpoint_service import Checkpoint, CheckpointService
from uwkit.services.corpus_service import CorpusService
from uwkit.services.training_service import TrainingService
from uwkit.services.evaluation_service import EvaluationService
from uwkit.services.benchmark_service import BenchmarkService

__all__ = [
    "Checkpoint",
    "CheckpointService",
    "CorpusService",
    "TrainingService",
    "EvaluationService",
    "BenchmarkService",
]
