"""Pseudospectral simulator and certification harness for energy stability of
Schroedinger flows with fractional kinetic term and time-dependent potential."""

__version__ = "0.1.0"
