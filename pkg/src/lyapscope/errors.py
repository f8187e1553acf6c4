"""Exception types shared across modules."""

from __future__ import annotations

import numpy as np


class LyapscopeError(Exception):
    """Base class for all library errors."""


class ExprSyntaxError(LyapscopeError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class ExprDomainError(LyapscopeError, ArithmeticError):
    """Evaluation left the real domain (log of non-positive, division by zero, ...).

    ``indices`` are the offending rows of a batched evaluation and ``points``
    the corresponding inputs, when known.
    """

    def __init__(self, message: str, indices=None, points=None):
        super().__init__(message)
        self.indices = None if indices is None else np.asarray(indices)
        self.points = None if points is None else np.asarray(points)


class PreconditionError(LyapscopeError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = None if witness is None else np.asarray(witness, dtype=float)


class ConvergenceError(LyapscopeError):
    def __init__(self, message: str, iterations: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InsideSetError(LyapscopeError):
    """A set-homotopy field was requested at points inside the target set."""

    def __init__(self, message: str, indices):
        super().__init__(message)
        self.indices = np.asarray(indices)
