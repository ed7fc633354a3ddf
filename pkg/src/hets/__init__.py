"""Leveled approximate-arithmetic homomorphic encryption and encrypted CNN inference."""

__version__ = "0.1.0"
