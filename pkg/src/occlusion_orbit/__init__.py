"""Occlusion-aware orbit planning and guidance for a fixed-wing UAV tracking a ground target."""

__version__ = "0.1.0"
