"""Simulation lab for mean-field limits of particle systems on digraph measures."""

__version__ = "0.1.0"
