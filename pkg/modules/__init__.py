"""Modules package for simulator orchestration."""

from .trapping_pipeline import TrappingPipeline
from .validation_pipeline import ValidationSuite

__all__ = ["TrappingPipeline", "ValidationSuite"]
