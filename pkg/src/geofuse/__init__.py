"""Geocentric RGB-D property maps and multi-stream fusion experiments."""

__version__ = "0.1.0"
