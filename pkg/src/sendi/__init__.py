"""Set-encoding identification of nonlinear dynamical systems."""

__version__ = "0.1.0"
