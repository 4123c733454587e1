"""Polar-feature modulation classification with a channel compensation network."""

__version__ = "0.1.0"
