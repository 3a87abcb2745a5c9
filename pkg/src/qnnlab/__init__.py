"""Statevector laboratory for multi-data QNN training dynamics."""
__version__ = "0.1.0"
