"""Surrogate-accelerated Bayesian inversion of 1D shock-tube initial states."""

__version__ = "0.1.0"
