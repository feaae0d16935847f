"""Pseudo-spectral Newton-Nash convex integration toolkit for 2D active scalar equations."""

__version__ = "0.1.0"
