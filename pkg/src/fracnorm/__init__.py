"""Fractional Sobolev (semi-)norms of piecewise-linear functions on 1D/2D meshes."""

__version__ = "0.1.0"
