"""Optimal joint time- and graph-domain sampling of networked dynamics."""

__version__ = "0.1.0"
