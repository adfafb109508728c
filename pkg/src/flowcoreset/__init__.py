"""Coreset-compressed Bayesian classification for network flow data."""

__version__ = "0.1.0"
