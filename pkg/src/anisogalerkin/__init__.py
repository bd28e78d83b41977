"""Spectral-Galerkin solver for anisotropic parabolic equations with variable exponents."""

__version__ = "0.1.0"
