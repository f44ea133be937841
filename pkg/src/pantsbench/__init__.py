"""Numerical workbench for hyperbolic pants: frames, Steiner graphs, classification and matching."""

__version__ = "0.1.0"
