"""Scenario-aware semantic image transmission: importance labels, a hyperprior
vectoriser, variable-length JSCC over AWGN, and importance-weighted metrics."""

__version__ = "0.1.0"
