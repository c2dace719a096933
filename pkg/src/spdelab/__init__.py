"""Numerical lab for non-linear stochastic heat equations with spatially homogeneous noise."""

__version__ = "0.1.0"
