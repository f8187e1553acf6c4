"""Batched forward-mode dual numbers (first and second order).

A :class:`DualVec` carries, for ``N`` evaluation points at once, the value,
the gradient with respect to the ``n`` state variables and optionally the
Hessian. Expressions are evaluated by walking the tree once per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ExprDomainError
from .nodes import BinOp, Const, Expr, Func, Neg, Param, Partial, Var

KINK_TUBE = 1e-9


@dataclass
class DualVec:
    """Value, gradient ``(N, n)`` and optional Hessian ``(N, n, n)``."""

    val: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None

    @property
    def order(self) -> int:
        if self.grad is None:
            return 0
        return 1 if self.hess is None else 2

    def _chain(self, f0, f1, f2) -> "DualVec":
        # Apply a scalar function with derivatives f1, f2 (already evaluated).
        grad = hess = None
        if self.grad is not None:
            grad = f1[:, None] * self.grad
        if self.hess is not None:
            hess = f1[:, None, None] * self.hess + f2[:, None, None] * (
                self.grad[:, :, None] * self.grad[:, None, :]
            )
        return DualVec(f0, grad, hess)

    def __neg__(self):
        return DualVec(
            -self.val,
            None if self.grad is None else -self.grad,
            None if self.hess is None else -self.hess,
        )

    def __add__(self, other: "DualVec"):
        return DualVec(
            self.val + other.val,
            None if self.grad is None else self.grad + other.grad,
            None if self.hess is None else self.hess + other.hess,
        )

    def __sub__(self, other: "DualVec"):
        return DualVec(
            self.val - other.val,
            None if self.grad is None else self.grad - other.grad,
            None if self.hess is None else self.hess - other.hess,
        )

    def __mul__(self, other: "DualVec"):
        a, b = self, other
        grad = hess = None
        if a.grad is not None:
            grad = a.val[:, None] * b.grad + b.val[:, None] * a.grad
        if a.hess is not None:
            cross = a.grad[:, :, None] * b.grad[:, None, :]
            hess = (
                a.val[:, None, None] * b.hess
                + b.val[:, None, None] * a.hess
                + cross
                + np.swapaxes(cross, 1, 2)
            )
        return DualVec(a.val * b.val, grad, hess)

    def reciprocal(self):
        v = self.val
        inv = 1.0 / v
        return self._chain(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other: "DualVec"):
        return self * other.reciprocal()


class _Evaluator:
    """Single-use tree walker collecting domain-error and kink masks."""

    def __init__(self, points, order, u=None):
        self.X = points
        self.N, self.n = points.shape
        self.U = u
        self.order = order
        self.bad = np.zeros(self.N, dtype=bool)
        self.kink = np.zeros(self.N, dtype=bool)
        self.reasons: list[str] = []

    def _const(self, value, order):
        val = np.full(self.N, float(value))
        grad = np.zeros((self.N, self.n)) if order >= 1 else None
        hess = np.zeros((self.N, self.n, self.n)) if order >= 2 else None
        return DualVec(val, grad, hess)

    def _flag(self, mask, reason):
        if np.any(mask):
            self.bad |= mask
            self.reasons.append(reason)

    def run(self, e: Expr, order: int) -> DualVec:
        if isinstance(e, Const):
            return self._const(e.value, order)
        if isinstance(e, Param):
            return self._const(e.value, order)
        if isinstance(e, Var):
            if e.kind == "u":
                if self.U is None:
                    raise ValueError(f"input {e.name} referenced but no input values given")
                out = self._const(0.0, order)
                out.val = self.U[:, e.index].astype(float).copy()
                return out
            if e.index >= self.n:
                raise ValueError(f"{e.name} referenced with only {self.n} state components")
            out = self._const(0.0, order)
            out.val = self.X[:, e.index].astype(float).copy()
            if order >= 1:
                out.grad[:, e.index] = 1.0
            return out
        if isinstance(e, Neg):
            return -self.run(e.arg, order)
        if isinstance(e, Func):
            return self._func(e.name, self.run(e.arg, order))
        if isinstance(e, BinOp):
            if e.op == "^":
                return self._pow(self.run(e.left, order), e.right)
            a = self.run(e.left, order)
            b = self.run(e.right, order)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                self._flag(b.val == 0.0, "division by zero")
                with np.errstate(divide="ignore", invalid="ignore"):
                    return a / b
            raise ValueError(f"unknown operator {e.op!r}")
        if isinstance(e, Partial):
            if order >= 2:
                raise NotImplementedError("second derivatives of a derivative node need third-order duals")
            inner = self.run(e.body, order + 1)
            val = inner.grad[:, e.index].copy()
            grad = inner.hess[:, e.index, :].copy() if order >= 1 else None
            return DualVec(val, grad, None)
        raise TypeError(f"not an expression node: {e!r}")

    def _func(self, name, a: DualVec) -> DualVec:
        v = a.val
        with np.errstate(all="ignore"):
            if name == "exp":
                ev = np.exp(v)
                return a._chain(ev, ev, ev)
            if name == "log":
                self._flag(v <= 0.0, "log of non-positive value")
                inv = 1.0 / v
                return a._chain(np.log(v), inv, -inv * inv)
            if name == "sin":
                s, c = np.sin(v), np.cos(v)
                return a._chain(s, c, -s)
            if name == "cos":
                s, c = np.sin(v), np.cos(v)
                return a._chain(c, -s, -c)
            if name == "sqrt":
                self._flag(v < 0.0, "sqrt of negative value")
                r = np.sqrt(v)
                d1 = 0.5 / r
                return a._chain(r, d1, -0.5 * d1 / v)
            if name == "abs":
                self.kink |= np.abs(v) < KINK_TUBE
                s = np.sign(v)
                return a._chain(np.abs(v), s, np.zeros_like(v))
            if name == "sign":
                self.kink |= np.abs(v) < KINK_TUBE
                z = np.zeros_like(v)
                return a._chain(np.sign(v), z, z)
        raise ValueError(f"unknown function {name!r}")

    def _pow(self, a: DualVec, expo: Expr) -> DualVec:
        p = float(self.run(expo, 0).val[0]) if self.N else 0.0
        v = a.val
        is_int = float(p).is_integer()
        if not is_int:
            self._flag(v <= 0.0, "non-integer power of non-positive base")
        with np.errstate(all="ignore"):
            if p == 0.0:
                one = np.ones_like(v)
                return a._chain(one, np.zeros_like(v), np.zeros_like(v))
            f0 = _ipow(v, p) if is_int else np.power(v, p)
            f1 = p * (_ipow(v, p - 1) if is_int else np.power(v, p - 1))
            c2 = p * (p - 1)
            if c2 == 0.0:
                f2 = np.zeros_like(v)
            else:
                f2 = c2 * (_ipow(v, p - 2) if is_int else np.power(v, p - 2))
            return a._chain(f0, f1, f2)


def _ipow(v, p):
    if p == 0:
        return np.ones_like(v)
    if p == 1:
        return v
    if p == 2:
        return v * v
    return np.power(v, p)


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


def evaluate_dual(e: Expr, points, order: int = 1, u=None, check: bool = True):
    """Evaluate ``e`` at a batch of points.

    Returns ``(DualVec, kink_mask)``. With ``check`` set, non-finite results
    or domain violations raise :class:`ExprDomainError` naming the rows.
    """
    X = _as_points(points)
    U = None if u is None else _as_points(u)
    ev = _Evaluator(X, order, U)
    out = ev.run(e, order)
    if check:
        bad = ev.bad | ~np.isfinite(out.val)
        if out.grad is not None:
            bad |= ~np.all(np.isfinite(out.grad), axis=1)
        if out.hess is not None:
            bad |= ~np.all(np.isfinite(out.hess), axis=(1, 2))
        if np.any(bad):
            idx = np.flatnonzero(bad)
            reason = ev.reasons[0] if ev.reasons else "non-finite result"
            raise ExprDomainError(
                f"{reason} at {len(idx)} point(s), first {X[idx[0]].tolist()}", idx, X[idx]
            )
    return out, ev.kink


def evaluate(e: Expr, points, u=None) -> np.ndarray:
    """Values of ``e`` at a batch of points, shape ``(N,)``."""
    return evaluate_dual(e, points, order=0, u=u)[0].val


def eval_grad(e: Expr, x):
    """Value and gradient at a single point."""
    d, _ = evaluate_dual(e, x, order=1)
    return float(d.val[0]), d.grad[0].copy()


def eval_grad_batch(e: Expr, points, u=None):
    d, _ = evaluate_dual(e, points, order=1, u=u)
    return d.val, d.grad


def eval_hessian(e: Expr, x):
    """Value, gradient and Hessian at a single point."""
    d, _ = evaluate_dual(e, x, order=2)
    return float(d.val[0]), d.grad[0].copy(), d.hess[0].copy()


def eval_hessian_batch(e: Expr, points):
    d, _ = evaluate_dual(e, points, order=2)
    return d.val, d.grad, d.hess


def kink_mask(exprs, points) -> np.ndarray:
    """Rows lying within the non-smooth tube of any ``abs``/``sign`` argument."""
    X = _as_points(points)
    mask = np.zeros(len(X), dtype=bool)
    for e in exprs:
        _, k = evaluate_dual(e, X, order=0, check=False)
        mask |= k
    return mask
