"""Semiclassical orbits of Bloch electrons and their stability zones."""

__version__ = "0.1.0"
