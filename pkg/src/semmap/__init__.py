"""Semantic 3D map localization, change detection and descriptor update."""

__version__ = "0.1.0"
