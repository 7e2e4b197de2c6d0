"""Simulation and analysis of NV-ensemble strain interferometry."""

__version__ = "0.1.0"
