"""Spectral drift detection and time-resolved estimation for binary clickstreams."""

__version__ = "0.1.0"
