"""Generalized rank regression."""
__version__ = "0.1.0"
