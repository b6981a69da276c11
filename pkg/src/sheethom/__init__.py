"""Homogenization of periodic media with conducting sheets."""

__version__ = "0.1.0"
