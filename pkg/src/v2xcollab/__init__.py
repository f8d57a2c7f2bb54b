"""Asynchronous multi-agent collaborative 3D detection, simulated."""

__version__ = "0.1.0"
