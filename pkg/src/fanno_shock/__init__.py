"""Frictional transonic shocks in a rectilinear duct."""

__version__ = "0.1.0"
