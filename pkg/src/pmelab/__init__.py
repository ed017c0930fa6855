"""Numerical laboratory for higher integrability of singular porous medium systems."""

__version__ = "0.1.0"
