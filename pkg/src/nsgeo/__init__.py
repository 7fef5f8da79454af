"""Covariate-driven non-stationary geostatistical models."""
__version__ = "0.1.0"
