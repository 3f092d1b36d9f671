"""Encoder, distillation, prompt generation and mask decoding."""

from uwkit.modeling.uwsam import UWSAM, DetectionResult
from uwkit.modeling.builder import build_distiller, build_model, count_parameters

__all__ = ["UWSAM", "DetectionResult", "build_model", "build_distiller", "count_parameters"]
