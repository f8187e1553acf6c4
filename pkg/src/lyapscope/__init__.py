"""Numerical checks for (control) Lyapunov certificates and the convexity
obstructions and homotopies built on them."""

__version__ = "0.1.0"
