"""Numerical toolkit for constant scalar curvature symplectic potentials on polygons."""

__version__ = "0.1.0"
