"""Numerical laboratory for the time-dependent magnetic Schrodinger equation."""
__version__ = "0.1.0"
