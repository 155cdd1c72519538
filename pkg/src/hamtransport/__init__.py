"""Hamiltonian curvature, Riccati transport and entropy inequality checks."""

__version__ = "0.1.0"
