"""Numerical search for regular crosspolytopes inscribed in smooth bodies."""

__version__ = "0.1.0"
