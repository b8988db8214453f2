"""Provenance sketches for data skipping: capture, cost-based attribute
selection, sampling-based size estimation, and a benchmarking workbench."""

__version__ = "0.1.0"
