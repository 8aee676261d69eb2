"""Numerical checks for fBm-driven stochastic delay equations."""

__version__ = "0.1.0"
