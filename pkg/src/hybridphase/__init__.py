"""Quantum-classical hybrid dynamics in the oscillator representation."""

__version__ = "0.1.0"
