"""Velocity models from sets of geometry-aware traces: simulate surveys, learn set-to-block maps, stitch."""

__version__ = "0.1.0"
