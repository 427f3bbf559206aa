"""Spectral estimators for GLMs with correlated Gaussian designs."""

__version__ = "0.1.0"
