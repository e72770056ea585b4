"""Detect AI-generated images from the noise fingerprint of their simplest patch."""

__version__ = "0.1.0"
