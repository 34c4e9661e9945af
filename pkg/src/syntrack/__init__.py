"""Syntactic tracking: grammar-based trajectory classification with IMM and particle filters."""
__version__ = "0.1.0"
