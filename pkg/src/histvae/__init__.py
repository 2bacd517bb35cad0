"""Histogram-conditioned graph VAE for small-molecule generation."""

__version__ = "0.1.0"
