"""COCO average precision and dataset statistics."""

from uwkit.metrics.coco_eval import CocoEvaluator, compute_ap, evaluate_results
from uwkit.metrics.dataset_stats import dataset_stats

__all__ = ["CocoEvaluator", "compute_ap", "evaluate_results", "dataset_stats"]
