"""Numerical laboratory for localization of Schrödinger operators with Gaussian random potentials."""

from gaussloc.grid import Grid

__version__ = "0.1.0"

__all__ = ["Grid", "__version__"]
