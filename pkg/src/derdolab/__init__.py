"""Decoding-energy-rate-distortion optimization laboratory."""

__version__ = "0.1.0"
