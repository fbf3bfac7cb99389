"""Numerical services using functional approach."""
