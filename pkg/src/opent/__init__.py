"""Operator-entanglement dynamics of a dissipative spin-1/2 chain."""

__version__ = "0.1.0"
