"""Searches for violations of necessary conditions for convex (control) Lyapunov functions.

A smooth convex Lyapunov function can only exist if ``F(x) != lam * x`` for
every ``x != 0`` and ``lam >= 0``; the control-affine analogue asks for an
input escaping every such ray. Violations are hunted on a sample plan and
refined by derivative-free pattern search.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ExprDomainError
from .exprcore.dual import evaluate_dual
from .exprcore.system import SystemDef
from .lyapcert.plan import SamplePlan

TOL_ALIGN = 1e-6
G_ZERO = 1e-10
VANISH = 1e-12
VIOLATED, CLEAR = "violated", "clear"
OBSTRUCTED, NOT_APPLICABLE = "obstructed", "not-applicable"


@dataclass
class AlignmentWitness:
    """Best point found; ``lam`` is the nonnegative least-squares ray scalar."""

    x: np.ndarray
    lam: float
    alignment: float
    residual: float

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "lambda": self.lam,
            "alignment": self.alignment,
            "residual": self.residual,
        }


def alignment_stats(F, X):
    """Row-wise alignment of ``F`` with ``X``, returned as ``(cos, lam, residual)``."""
    F = np.atleast_2d(F)
    X = np.atleast_2d(X)
    nf = np.linalg.norm(F, axis=1)
    nx = np.linalg.norm(X, axis=1)
    dot = np.einsum("ij,ij->i", F, X)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(nf > 0, dot / (nf * nx), 1.0)
        lam = np.maximum(0.0, dot / nx**2)
        res = np.linalg.norm(F - lam[:, None] * X, axis=1) / (nf + nx)
    return np.clip(cos, -1.0, 1.0), lam, res


def pattern_search(f, x0, step, max_iter=500, min_step=1e-16):
    """Compass search with axis and diagonal polls; halves the step on failure.

    Returns ``(x, f(x), iterations)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = len(x)
    dirs = np.vstack([np.eye(n), -np.eye(n)])
    if n == 2:
        diag = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]]) / np.sqrt(2)
        dirs = np.vstack([dirs, diag])
    fx = f(x)
    it = 0
    while it < max_iter and step > min_step * max(1.0, np.linalg.norm(x)):
        it += 1
        cand = x + step * dirs
        vals = np.array([f(c) for c in cand])
        k = int(np.argmin(vals))
        if vals[k] < fx:
            x, fx = cand[k], vals[k]
            step *= 1.5
        else:
            step *= 0.5
    return x, fx, it


@dataclass(frozen=True)
class RefineConfig:
    max_iter: int = 500
    tol_align: float = TOL_ALIGN
    seeds: int = 5
    rel_step: float = 0.05


@dataclass
class AlignmentResult:
    """Outcome of :func:`ray_alignment_search`; unpacks as ``(best, verdict)``."""

    best: AlignmentWitness
    verdict: str
    grid_points: np.ndarray = field(repr=False, default=None)
    grid_alignment: np.ndarray = field(repr=False, default=None)
    grid_best: float = float("nan")
    note: str = ""

    def __iter__(self):
        return iter((self.best, self.verdict))

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness": self.best.to_dict(),
            "grid_best_alignment": self.grid_best,
            "samples": 0 if self.grid_points is None else len(self.grid_points),
            "note": self.note,
        }


def _witness(fn, xv) -> AlignmentWitness:
    F = fn(xv)
    cos, lam, res = alignment_stats(F[None], xv[None])
    return AlignmentWitness(np.asarray(xv, dtype=float), float(lam[0]), float(cos[0]), float(res[0]))


def ray_alignment_search(
    s: SystemDef, plan: SamplePlan | None = None, refine: RefineConfig | None = None
) -> AlignmentResult:
    """Maximize the cosine between ``F(x)`` and ``x`` over the plan, then refine.

    The refinement minimizes ``|F/|F| - x/|x||^2``, which vanishes exactly on
    the aligned set and is smooth there; it stays inside the plan annulus.
    Verdict is ``violated`` iff the refined residual is at most ``tol_align``
    with positive alignment, or the field vanishes at a sample.
    """
    s.require_autonomous("ray_alignment_search")
    plan = plan or SamplePlan()
    refine = refine or RefineConfig()
    X = plan.points(s.n)
    F = s.drift_values(X)
    cos, lam, res = alignment_stats(F, X)
    nf = np.linalg.norm(F, axis=1)

    zero = np.flatnonzero(nf <= VANISH)
    if len(zero):
        k = int(zero[0])
        best = AlignmentWitness(X[k].copy(), 0.0, float(cos[k]), float(res[k]))
        return AlignmentResult(best, VIOLATED, X, cos, float(cos.max()), "field vanishes at a nonzero sample")

    fn = s.compiled()

    def objective(xv):
        r = np.linalg.norm(xv)
        if r < 0.5 * plan.r_min or r > plan.r_max:
            return np.inf
        try:
            Fx = fn(xv)
        except ArithmeticError:
            return np.inf
        nF = np.linalg.norm(Fx)
        if not np.isfinite(nF):
            return np.inf
        if nF == 0.0:
            return 0.0
        d = Fx / nF - xv / r
        return float(d @ d)

    order = np.argsort(-cos)
    best = _witness(fn, X[order[0]])
    for k in order[: refine.seeds]:
        x0 = X[k]
        xr, _, _ = pattern_search(objective, x0, refine.rel_step * np.linalg.norm(x0), refine.max_iter)
        try:
            cand = _witness(fn, xr)
        except ArithmeticError:
            continue
        if (cand.residual, -cand.alignment) < (best.residual, -best.alignment):
            best = cand
    # with lam clamped to 0 a tiny relative residual only means |F| << |x|, not alignment
    aligned = best.residual <= refine.tol_align and best.alignment > 0.0
    verdict = VIOLATED if aligned else CLEAR
    return AlignmentResult(best, verdict, X, cos, float(cos[order[0]]))


def write_alignment_csv(result: AlignmentResult, path) -> Path:
    """Grid samples as ``x1..xn,alignment`` rows for plotting."""
    path = Path(path)
    X, a = result.grid_points, result.grid_alignment
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(X.shape[1])] + ["alignment"])
        for row, v in zip(X, a):
            w.writerow([f"{c:.17g}" for c in row] + [f"{v:.17g}"])
    return path


# -- control-affine systems --------------------------------------------------


@dataclass
class ClfWitness:
    x: np.ndarray
    g_norm: float
    lam: float
    residual: float

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "g_norm": self.g_norm,
            "lambda": self.lam,
            "residual": self.residual,
        }


@dataclass
class ClfScanResult:
    """Outcome of :func:`clf_obstruction_scan`; unpacks as ``(witness, verdict)``.

    ``nearest`` holds the minimum-``|G|`` diagnostics when nothing violates.
    """

    witness: ClfWitness | None
    verdict: str
    nearest: ClfWitness | None = None
    samples: int = 0

    def __iter__(self):
        return iter((self.witness, self.verdict))

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "nearest": None if self.nearest is None else self.nearest.to_dict(),
            "samples": self.samples,
        }


def _g_norms(s: SystemDef, X) -> np.ndarray:
    G = s.input_matrix(X)
    return np.linalg.norm(G.reshape(len(X), -1), axis=1)


def clf_obstruction_scan(
    s: SystemDef,
    plan: SamplePlan | None = None,
    *,
    tol_align: float = TOL_ALIGN,
    g_zero: float = G_ZERO,
    refine_seeds: int = 5,
    points=None,
) -> ClfScanResult:
    """Look for ``x != 0`` where all input columns vanish and the drift is ``lam * x``, ``lam >= 0``.

    At such a point no input moves ``f(x, u)`` off the ray, so no smooth
    convex CLF exists.
    """
    s.require_control("clf_obstruction_scan")
    plan = plan or SamplePlan()
    X = plan.points(s.n) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    X = X[np.linalg.norm(X, axis=1) > 0]
    gn = _g_norms(s, X)
    F = s.drift_values(X)
    cos, lam, res = alignment_stats(F, X)
    hit = np.flatnonzero((gn <= g_zero) & (res <= tol_align) & (cos > 0))
    if len(hit):
        k = int(hit[0])
        w = ClfWitness(X[k].copy(), float(gn[k]), float(lam[k]), float(res[k]))
        return ClfScanResult(w, VIOLATED, w, len(X))

    def gobj(xv):
        r = np.linalg.norm(xv)
        if r < 0.5 * plan.r_min or r > plan.r_max:
            return np.inf
        try:
            return float(_g_norms(s, xv[None])[0] ** 2)
        except ArithmeticError:
            return np.inf

    order = np.argsort(gn)
    nearest = None
    for k in order[:refine_seeds]:
        xr, _, _ = pattern_search(gobj, X[k], 0.05 * np.linalg.norm(X[k]), 200)
        g = float(np.sqrt(gobj(xr)))
        cr, lr, rr = alignment_stats(s.drift_values(xr), xr)
        w = ClfWitness(xr, g, float(lr[0]), float(rr[0]))
        if g <= g_zero and w.residual <= tol_align and cr[0] > 0:
            return ClfScanResult(w, VIOLATED, w, len(X))
        if nearest is None or w.g_norm < nearest.g_norm:
            nearest = w
    return ClfScanResult(None, CLEAR, nearest, len(X))


@dataclass
class NonholonomicResult:
    verdict: str
    reason: str
    rank: int | None = None


def nonholonomic_check(s: SystemDef, plan: SamplePlan | None = None) -> NonholonomicResult:
    """Driftless system with constant input columns spanning fewer than ``n`` directions.

    Such systems admit no smooth CLF at all when ``1 < m < n``.
    """
    plan = plan or SamplePlan(total=256, shell=16, axis=4)
    n, m = s.n, s.m
    if not 1 < m < n:
        return NonholonomicResult(NOT_APPLICABLE, f"needs 1 < m < n, got m={m}, n={n}")
    X = plan.points(n)
    try:
        F = s.drift_values(X)
        if np.max(np.abs(F)) > VANISH:
            return NonholonomicResult(NOT_APPLICABLE, "drift is not identically zero")
        for i, row in enumerate(s.inputs):
            for j, g in enumerate(row):
                d, _ = evaluate_dual(g, X, order=1)
                if np.max(np.abs(d.grad)) > VANISH:
                    return NonholonomicResult(NOT_APPLICABLE, f"input column {j + 1} depends on x")
        G = s.input_matrix(X[:1])[0]
    except ExprDomainError as exc:
        return NonholonomicResult(NOT_APPLICABLE, f"evaluation failed: {exc}")
    sv = np.linalg.svd(G, compute_uv=False)
    rank = int(np.sum(sv > 1e-9 * sv.max())) if sv.size and sv.max() > 0 else 0
    if rank < n:
        return NonholonomicResult(OBSTRUCTED, f"rank {rank} < n={n} with zero drift", rank)
    return NonholonomicResult(NOT_APPLICABLE, f"input columns have full rank {rank}", rank)
