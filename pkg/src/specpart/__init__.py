"""Numerically optimal spectral partitions via penalized eigenvalues."""

__version__ = "0.1.0"
