"""Porflow - two-phase compressible flow in porous media."""

__version__ = "0.1.0"
