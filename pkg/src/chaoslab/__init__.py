"""Numerical laboratory for propagation of chaos with mollified interaction kernels."""

__version__ = "0.1.0"
