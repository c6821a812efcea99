"""Adaptive anisotropic total variation (A2TV): flows, ROF, spectral analysis and eigenfunction tests."""

__version__ = "0.1.0"
