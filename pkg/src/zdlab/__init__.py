"""Particle laboratory for the zero-diffusion limit of aggregation equations
on convex domains."""

__version__ = "0.1.0"
