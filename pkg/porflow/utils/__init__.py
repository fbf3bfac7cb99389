"""Utility functions using functional approach."""
