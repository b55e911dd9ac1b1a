"""Perception-aware multi-agent trajectory planning on a simulated network."""

__version__ = "0.1.0"
