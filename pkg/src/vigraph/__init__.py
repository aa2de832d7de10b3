"""Structured temporal graph layers for clip-level sequence classification."""

__version__ = "0.1.0"
