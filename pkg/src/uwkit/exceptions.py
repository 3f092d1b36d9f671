"""Exceptions for uwkit."""


class UwkitError(Exception):
    """Base exception for uwkit errors."""
    pass


class ShapeError(UwkitError, ValueError):
    """Tensor or grid shapes do not agree."""
    pass


class ConfigError(UwkitError, ValueError):
    """Invalid or inconsistent configuration."""
    pass


class ParseError(UwkitError):
    """Malformed annotation or checkpoint document."""
    pass


class ItemLoadError(UwkitError):
    """A single dataset item could not be loaded.

    The COCO loader collects these instead of raising them.
    """

    def __init__(self, image_id: int, file_name: str, reason: str):
        super().__init__(f"image {image_id} ({file_name}): {reason}")
        self.image_id = image_id
        self.file_name = file_name
        self.reason = reason


class DivergenceError(UwkitError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, losses: dict[str, float]):
        detail = ", ".join(f"{k}={v:.6g}" for k, v in losses.items())
        super().__init__(f"non-finite loss at step {step}: {detail}")
        self.step = step
        self.losses = losses


class CheckpointError(UwkitError):
    """Checkpoint archive is missing, incomplete or incompatible."""
    pass
