"""Numerical toolkit for quadratic-curvature gravity: the field tensor A,
linearized charges, fourth-order energies and static solution classification."""

__version__ = "0.1.0"
