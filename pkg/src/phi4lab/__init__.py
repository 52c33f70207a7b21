"""Numerical laboratory for the trapped complex phi^4 field in two dimensions."""

__version__ = "0.1.0"
