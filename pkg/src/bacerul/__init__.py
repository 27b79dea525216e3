"""Bi-directional adversarial RUL prediction with an encoded conditional space."""

__version__ = "0.1.0"
