"""Simulation and analysis of a narrow-band nondegenerate cavity pair source."""
__version__ = "0.1.0"
