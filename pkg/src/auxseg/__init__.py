"""Semantic segmentation with an auxiliary depth task and adaptive loss weighting."""

__version__ = "0.1.0"
