"""Utility modules for uwkit."""

from uwkit.utils.config import CONFIG

__all__ = ["CONFIG"]
