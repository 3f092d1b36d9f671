"""uwkit - underwater instance segmentation with prompt generation and masked-graph distillation."""

__version__ = "0.1.0"
