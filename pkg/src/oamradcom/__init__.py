"""Simulation laboratory for UCA-based joint OAM radar-communication systems."""

__version__ = "0.1.0"
