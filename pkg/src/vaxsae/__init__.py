"""Bayesian space-time small-area estimation of vaccination coverage."""

__version__ = "0.1.0"
