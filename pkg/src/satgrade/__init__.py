"""Realistic satellite-image degradation and a residual SR network."""

__version__ = "0.1.0"
