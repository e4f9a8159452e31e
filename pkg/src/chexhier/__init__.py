"""Hierarchical multi-label chest X-ray classification toolkit."""

__version__ = "0.1.0"
