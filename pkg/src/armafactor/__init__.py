"""Robust identification of MA and ARMA dynamic factor models."""

__version__ = "0.1.0"
