"""Numerical Legendre-Fenchel conjugate over a search box."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ..exprcore.system import ScalarCertificate


class BoundaryArgmaxWarning(UserWarning):
    """The maximizer sits on the search-box boundary; the box is likely too small."""


@dataclass(frozen=True)
class SearchBox:
    lower: float = -10.0
    upper: float = 10.0
    grid: int = 41
    refine: bool = True
    seeds: int = 4
    boundary_tol: float = 1e-6


@dataclass
class ConjugateValue:
    value: float
    argmax: np.ndarray
    on_boundary: bool
    convex_verified: bool | None = None


def _grid(n, box: SearchBox, max_points=200_000):
    k = box.grid
    while k > 3 and k**n > max_points:
        k = (k + 1) // 2 + 1
    axis = np.linspace(box.lower, box.upper, k)
    if n == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def fenchel_conjugate(
    V: ScalarCertificate,
    y,
    search: SearchBox | None = None,
    convex_verified: bool | None = None,
) -> ConjugateValue:
    """``sup_x <y, x> - V(x)`` over the box: grid scan, then L-BFGS-B from the best seeds.

    Without a convexity verification the result is only the conjugate of
    the restriction of ``V`` to the box (``convex_verified`` is recorded).
    """
    search = search or SearchBox()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = V.n
    X = _grid(n, search)
    X = np.vstack([np.zeros(n), X])  # x = 0 guarantees value >= -V(0)
    with np.errstate(all="ignore"):
        try:
            vals = X @ y - V.value(X)
        except ArithmeticError:
            vals = np.array([float(X[i] @ y - V.value(X[i])[0]) if _finite(V, X[i]) else -np.inf for i in range(len(X))])
    order = np.argsort(-vals)
    best_x, best_v = X[order[0]].copy(), float(vals[order[0]])

    if search.refine:
        bounds = [(search.lower, search.upper)] * n

        def neg(xv):
            v, g = V.grad(xv)
            return float(v[0] - xv @ y), g[0] - y

        for k in order[: search.seeds]:
            try:
                res = minimize(
                    neg, X[k], jac=True, method="L-BFGS-B", bounds=bounds,
                    options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 500},
                )
            except ArithmeticError:
                continue
            if np.isfinite(res.fun) and -res.fun > best_v:
                best_v, best_x = float(-res.fun), np.asarray(res.x, dtype=float)

    span = search.boundary_tol * max(1.0, search.upper - search.lower)
    on_boundary = bool(np.any(best_x <= search.lower + span) or np.any(best_x >= search.upper - span))
    if on_boundary:
        warnings.warn(
            f"conjugate argmax {best_x.tolist()} lies on the search box boundary; enlarge the box",
            BoundaryArgmaxWarning,
            stacklevel=2,
        )
    return ConjugateValue(best_v, best_x, on_boundary, convex_verified)


def _finite(V, xv) -> bool:
    try:
        return bool(np.isfinite(V.value(xv)[0]))
    except ArithmeticError:
        return False


def fenchel_residual(V: ScalarCertificate, X, search: SearchBox | None = None) -> np.ndarray:
    """``|V*(grad V(x)) + V(x) - <grad V(x), x>|`` at each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vals, grads = V.grad(X)
    out = np.empty(len(X))
    for i in range(len(X)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryArgmaxWarning)
            conj = fenchel_conjugate(V, grads[i], search)
        out[i] = abs(conj.value + vals[i] - grads[i] @ X[i])
    return out

