"""Sparse K-hop graph transformer with cardinality-preserving attention."""

__version__ = "0.1.0"
