"""Gradient-based surprisal features for quality assessment and robust classification."""

__version__ = "0.1.0"
