"""Calibration-aware lottery ticket pruning for small dense classifiers."""

__version__ = "0.1.0"
