"""Geometric treatment of photocounting and click-detector measurements."""

__version__ = "0.1.0"
