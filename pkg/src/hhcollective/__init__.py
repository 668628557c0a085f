"""Collective household models with personality-based distribution factors."""

__version__ = "0.1.0"
