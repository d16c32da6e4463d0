"""Deterministic communication testbed for offshore Power-to-X platforms."""

__version__ = "0.1.0"
