"""Deterministic figure regeneration from opent run outputs."""

__version__ = "0.1.0"
