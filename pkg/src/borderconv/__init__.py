"""Convolution boundary handling and how it leaks absolute position."""

__version__ = "0.1.0"
