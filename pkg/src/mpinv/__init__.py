"""Spectral tools for Moore-Penrose inverses of sample covariance matrices."""

__version__ = "0.1.0"
