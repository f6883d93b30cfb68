"""Simulated adaptive MRI acquisition with calibrated downstream-metric intervals."""

__version__ = "0.1.0"
