"""Chebyshev hop extraction with per-node MLP-Mixer refinement for node classification."""

__version__ = "0.1.0"
