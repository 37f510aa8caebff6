"""Relax-and-cut temporal decomposition for security-constrained unit commitment."""
__version__ = "0.1.0"
