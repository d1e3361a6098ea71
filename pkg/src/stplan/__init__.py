"""Spatio-temporal trajectory planning toolkit with a deterministic benchmark harness."""

__version__ = "0.1.0"
