"""Simulation and analysis tools for single-atom loading of Yb-174 tweezer arrays."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
