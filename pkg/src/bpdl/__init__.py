"""Finite-trait-space toolkit for birth/death population models with competition."""

__version__ = "0.1.0"
