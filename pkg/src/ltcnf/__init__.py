"""Liquid time-constant recurrent classifier with a numpy-only training stack."""

__version__ = "0.1.0"
