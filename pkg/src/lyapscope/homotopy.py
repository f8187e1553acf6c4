"""Straight-line and chained homotopies between vector fields, and their stability checks.

A convex Lyapunov function ``V`` for ``F`` decreases along every blend
``s F(x) - (1 - s) x``; the checks here sample that statement on an
``(s, x)`` grid. Set-valued and geodesic (pullback-metric) variants replace
the inward field ``-x`` by ``Pi_A(x) - x`` and ``Exp_x^{-1}(0)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .errors import ConvergenceError, ExprDomainError, InsideSetError, PreconditionError
from .exprcore.system import DiffeoDef, ScalarCertificate, SystemDef
from .lyapcert.plan import SamplePlan, unit_directions
from .lyapcert.report import FAIL, INCONCLUSIVE, PASS, CertificateReport
from .lyapcert.verify import TOL_DEC, decrease_threshold, verify_convexity, verify_lyapunov

MEMBERSHIP_TOL = 1e-12
CANONICAL = "canonical"


def _batch(X):
    X = np.asarray(X, dtype=float)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


def _field_fn(F) -> Callable:
    if isinstance(F, SystemDef):
        F.require_autonomous("homotopy blending")
        return F.drift_values
    return F


# -- inward fields ------------------------------------------------------------


def geodesic_inward_field(phi: DiffeoDef, x, max_cond: float = 1e12) -> np.ndarray:
    """``Exp_x^{-1}(0) = DPhi(x)^{-1} (Phi(0) - Phi(x))`` for the metric pulled back by ``phi``.

    With the identity diffeomorphism this is exactly ``-x``.
    """
    X, single = _batch(x)
    J = phi.jacobian(X)
    cond = np.linalg.cond(J)
    k = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
    if not np.isfinite(cond[k]) or cond[k] > max_cond:
        raise PreconditionError(
            f"Jacobian of {phi.name} is singular at {X[k].tolist()} (condition number {cond[k]:.3e})", X[k]
        )
    rhs = phi.apply(np.zeros(phi.n)) - phi.apply(X)
    out = np.linalg.solve(J, rhs[..., None])[..., 0]
    return out[0] if single else out


def inward_vector(inward, X) -> np.ndarray:
    """The vector subtracted (with weight ``1 - s``) in a blend: ``x`` or ``-Exp_x^{-1}(0)``."""
    if isinstance(inward, str):
        if inward != CANONICAL:
            raise ValueError(f"unknown inward field {inward!r}")
        return X
    return -geodesic_inward_field(inward, X)


def blend_field(s: float, F, inward=CANONICAL) -> Callable:
    """Evaluator of ``x -> s F(x) - (1 - s) inward_vector(x)``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    fF = _field_fn(F)

    def H(x):
        X, single = _batch(x)
        if s == 1.0:
            out = np.array(fF(X), dtype=float)
        elif s == 0.0:
            out = -inward_vector(inward, X)
        else:
            out = s * fF(X) - (1.0 - s) * inward_vector(inward, X)
        return out[0] if single else out

    return H


# -- paths --------------------------------------------------------------------


@dataclass
class Segment:
    """Blend on ``[s_lo, s_hi]`` between ``system`` and the inward field.

    ``direction='to_inward'`` runs from the system (at ``s_lo``) to the
    inward field; ``'from_inward'`` runs the other way.
    """

    s_lo: float
    s_hi: float
    system: SystemDef
    certificate: ScalarCertificate | None
    direction: str = "from_inward"
    inward: object = CANONICAL

    def sigma(self, s: float) -> float:
        """Weight of the system field at path parameter ``s``."""
        w = self.s_hi - self.s_lo
        return (self.s_hi - s) / w if self.direction == "to_inward" else (s - self.s_lo) / w


@dataclass
class HomotopyPath:
    segments: list
    label: str = ""

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a path needs at least one segment")
        if self.segments[0].s_lo != 0.0 or self.segments[-1].s_hi != 1.0:
            raise ValueError("segments must cover [0, 1]")
        for a, b in zip(self.segments, self.segments[1:]):
            if a.s_hi != b.s_lo:
                raise ValueError("segments must be contiguous")

    def segment_at(self, s: float) -> Segment:
        if not 0.0 <= s <= 1.0:
            raise ValueError("s must lie in [0, 1]")
        for seg in self.segments:
            if s <= seg.s_hi:
                return seg
        return self.segments[-1]

    def __call__(self, s: float, x) -> np.ndarray:
        """``H(s, x)``."""
        seg = self.segment_at(s)
        return blend_field(seg.sigma(s), seg.system, seg.inward)(x)


def straight_line_path(F: SystemDef, V: ScalarCertificate | None = None, inward=CANONICAL) -> HomotopyPath:
    """``H(s, x) = s F(x) - (1 - s) x`` (or its geodesic version)."""
    return HomotopyPath([Segment(0.0, 1.0, F, V, "from_inward", inward)], f"{F.name}~inward")


def _require_certified(V, F, plan, role):
    for check, rep in (
        ("lyapunov", verify_lyapunov(V, F, plan)),
        ("convexity", verify_convexity(V, plan)),
    ):
        if not rep.passed:
            w = rep.witness[0] if rep.witness else None
            raise PreconditionError(
                f"{role} certificate {V.name!r} fails the {check} check "
                f"({rep.context.get('condition')}, margin {rep.margin:.3e})",
                w,
            )


def build_chain_homotopy(
    F1: SystemDef,
    V1: ScalarCertificate,
    F2: SystemDef,
    V2: ScalarCertificate,
    plan: SamplePlan | None = None,
    check: bool = True,
) -> HomotopyPath:
    """Two-segment path ``F1 -> -id -> F2``.

    ``H(s,x) = -2 s x + (1 - 2 s) F1(x)`` for ``s <= 1/2`` and
    ``-(2 - 2 s) x + (2 s - 1) F2(x)`` after; ``V1`` and ``V2`` certify
    the respective halves and must both be convex Lyapunov functions.
    """
    if check:
        plan = plan or SamplePlan()
        _require_certified(V1, F1, plan, "first")
        _require_certified(V2, F2, plan, "second")
    return HomotopyPath(
        [
            Segment(0.0, 0.5, F1, V1, "to_inward"),
            Segment(0.5, 1.0, F2, V2, "from_inward"),
        ],
        f"{F1.name}~{F2.name}",
    )


def verify_homotopy_stability(
    path: HomotopyPath,
    plan: SamplePlan | None = None,
    s_grid: int = 101,
    tol_dec: float = TOL_DEC,
) -> CertificateReport:
    """``<grad V_seg(x), H(s, x)>`` must stay below the decrease threshold on the ``(s, x)`` grid."""
    plan = plan or SamplePlan(total=2000)
    for seg in path.segments:
        if seg.certificate is None:
            raise PreconditionError(f"segment [{seg.s_lo}, {seg.s_hi}] has no certificate")
    n = path.segments[0].system.n
    X = plan.points(n)
    X = X[np.linalg.norm(X, axis=1) > 0]
    mask = np.zeros(len(X), dtype=bool)
    for seg in path.segments:
        mask |= seg.certificate.kinks(X) | seg.system.kinks(X)
        if not isinstance(seg.inward, str):
            mask |= seg.inward.kinks(X)
    X = X[~mask]
    cache = {}
    try:
        for seg in path.segments:
            _, g = seg.certificate.grad(X)
            cache[id(seg)] = (g, seg.system.drift_values(X), inward_vector(seg.inward, X))
    except (ExprDomainError, PreconditionError) as exc:
        return CertificateReport(
            "homotopy", INCONCLUSIVE, float("nan"), [], tol_dec, len(X), plan.seed,
            {"condition": "domain", "error": str(exc)},
        )
    per_s = []
    worst = None
    for s in np.linspace(0.0, 1.0, s_grid):
        seg = path.segment_at(float(s))
        g, F, W = cache[id(seg)]
        sig = seg.sigma(float(s))
        H = sig * F - (1.0 - sig) * W
        q = np.einsum("ij,ij->i", g, H)
        thr = decrease_threshold(X, H, tol_dec)
        k = int(np.argmax(q - thr))
        per_s.append([float(s), float(q[k])] + X[k].tolist())
        if worst is None or q[k] - thr[k] > worst[0]:
            worst = (float(q[k] - thr[k]), float(s), float(q[k]), X[k], float(thr[k]))
    excess, s_w, q_w, x_w, thr_w = worst
    return CertificateReport(
        "homotopy",
        FAIL if excess >= 0 else PASS,
        q_w,
        [x_w],
        tol_dec,
        len(X) * s_grid,
        plan.seed,
        {"condition": "decrease", "s": s_w, "threshold": thr_w, "s_grid": s_grid, "per_s": per_s},
    )


def write_margins_csv(report: CertificateReport, path) -> Path:
    """Per-``s`` worst margins as ``s,margin,witness_x1..`` rows."""
    path = Path(path)
    rows = report.context.get("per_s", [])
    n = len(rows[0]) - 2 if rows else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "margin"] + [f"witness_x{i + 1}" for i in range(n)])
        for r in rows:
            w.writerow([f"{v:.17g}" for v in r])
    return path


# -- convex sets ----------------------------------------------------------------


class ConvexSetDef:
    n: int

    def project(self, X) -> np.ndarray:
        raise NotImplementedError

    def interior_point(self) -> np.ndarray:
        raise NotImplementedError

    def distance(self, X) -> np.ndarray:
        X, _ = _batch(X)
        return np.linalg.norm(X - self.project(X), axis=1)

    def contains(self, X, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        return self.distance(X) <= tol


@dataclass
class Ball(ConvexSetDef):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        self.n = len(self.center)
        if not self.radius >= 0:
            raise ValueError("ball radius must be nonnegative")

    def project(self, X) -> np.ndarray:
        X, single = _batch(X)
        d = X - self.center
        r = np.linalg.norm(d, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(r > self.radius, self.center + d * (self.radius / r), X)
        return out[0] if single else out

    def interior_point(self) -> np.ndarray:
        return self.center.copy()


@dataclass
class Box(ConvexSetDef):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("box needs lower <= upper componentwise")
        if not np.all(np.isfinite(self.lower) & np.isfinite(self.upper)):
            raise ValueError("box must be bounded")
        self.n = len(self.lower)

    def project(self, X) -> np.ndarray:
        X, single = _batch(X)
        out = np.clip(X, self.lower, self.upper)
        return out[0] if single else out

    def interior_point(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass
class Polytope(ConvexSetDef):
    """``{x : A x <= b}``; validated nonempty and bounded on construction."""

    A: np.ndarray
    b: np.ndarray
    max_sweeps: int = 10_000
    step_tol: float = 1e-12
    center: np.ndarray = field(init=False, repr=False)
    chebyshev_radius: float = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.A.shape[0] != len(self.b):
            raise ValueError("A and b disagree on the number of halfspaces")
        self.n = self.A.shape[1]
        norms = np.linalg.norm(self.A, axis=1)
        if np.any(norms == 0):
            raise ValueError("halfspace with zero normal")
        # Chebyshev center: max r subject to a_i.c + r |a_i| <= b_i
        c = np.zeros(self.n + 1)
        c[-1] = -1.0
        res = linprog(
            c,
            A_ub=np.column_stack([self.A, norms]),
            b_ub=self.b,
            bounds=[(None, None)] * self.n + [(0, None)],
            method="highs",
        )
        if res.status == 2:
            raise ValueError("polytope is empty")
        if res.status == 3:
            raise ValueError("polytope is unbounded")
        if res.status != 0:
            raise ValueError(f"polytope validation failed: {res.message}")
        self.center, self.chebyshev_radius = res.x[:-1], float(res.x[-1])
        # support function along a spread of directions
        dirs = np.vstack([np.eye(self.n), -np.eye(self.n), unit_directions(4 * self.n, self.n)])
        for d in dirs:
            r = linprog(-d, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.n, method="highs")
            if r.status == 3:
                raise ValueError(f"polytope is unbounded along {d.tolist()}")
        self._norm2 = norms**2

    def interior_point(self) -> np.ndarray:
        return self.center.copy()

    def project(self, X) -> np.ndarray:
        """Dykstra's alternating projections over the halfspaces (vectorized over rows)."""
        X, single = _batch(X)
        A, b = self.A, self.b
        x = X.copy()
        incr = np.zeros((len(b),) + X.shape)
        for sweep in range(self.max_sweeps):
            prev = x.copy()
            for i in range(len(b)):
                y = x + incr[i]
                viol = np.maximum(0.0, y @ A[i] - b[i]) / self._norm2[i]
                x_new = y - viol[:, None] * A[i]
                incr[i] = y - x_new
                x = x_new
            step = np.max(np.linalg.norm(x - prev, axis=1)) if len(x) else 0.0
            if step < self.step_tol:
                break
        else:
            resid = float(np.max(np.maximum(0.0, x @ A.T - b))) if len(x) else 0.0
            raise ConvergenceError(
                f"Dykstra projection did not converge in {self.max_sweeps} sweeps", self.max_sweeps, resid
            )
        return x[0] if single else x


def project_convex(A: ConvexSetDef, x) -> np.ndarray:
    """Euclidean projection onto ``A``."""
    return A.project(x)


def set_homotopy_field(s: float, F, A: ConvexSetDef, tol: float = MEMBERSHIP_TOL) -> Callable:
    """Evaluator of ``x -> s F(x) + (1 - s)(Pi_A(x) - x)``, defined only off ``A``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    fF = _field_fn(F)

    def H(x):
        X, single = _batch(x)
        Pi = A.project(X)
        inside = np.flatnonzero(np.linalg.norm(X - Pi, axis=1) <= tol)
        if len(inside):
            raise InsideSetError(
                f"set homotopy field requested at {len(inside)} point(s) inside the set, "
                f"first {X[inside[0]].tolist()}",
                inside,
            )
        toward = Pi - X
        out = toward if s == 0.0 else s * fF(X) + (1.0 - s) * toward
        return out[0] if single else out

    return H


def exterior_samples(A: ConvexSetDef, plan: SamplePlan) -> np.ndarray:
    """Plan points shifted to the set's interior point, keeping those outside ``A``."""
    X = plan.points(A.n) + A.interior_point()
    return X[~A.contains(X)]


def verify_set_homotopy(
    F, A: ConvexSetDef, plan: SamplePlan | None = None, s_grid: int = 11, tol_dec: float = TOL_DEC
) -> CertificateReport:
    """Squared-distance certificate along the set homotopy, sampled off ``A``.

    The certificate gradient is ``x - Pi_A(x)``; at ``s = 0`` the pairing
    equals ``-dist(x, A)^2``. For ``s > 0`` the outcome depends on ``F``.
    """
    plan = plan or SamplePlan(total=2000)
    X = exterior_samples(A, plan)
    Pi = A.project(X)
    g = X - Pi
    FX = _field_fn(F)(X)
    dist = np.linalg.norm(g, axis=1)
    worst = None
    per_s = []
    for s in np.linspace(0.0, 1.0, s_grid):
        H = s * FX + (1.0 - s) * (Pi - X)
        q = np.einsum("ij,ij->i", g, H)
        thr = -tol_dec * dist * np.minimum(1.0, np.linalg.norm(H, axis=1))
        k = int(np.argmax(q - thr))
        per_s.append([float(s), float(q[k])] + X[k].tolist())
        if worst is None or q[k] - thr[k] > worst[0]:
            worst = (float(q[k] - thr[k]), float(s), float(q[k]), X[k])
    excess, s_w, q_w, x_w = worst
    return CertificateReport(
        "set-homotopy", FAIL if excess >= 0 else PASS, q_w, [x_w], tol_dec, len(X) * s_grid, plan.seed,
        {"condition": "decrease", "s": s_w, "certificate": "squared distance", "per_s": per_s},
    )


# -- control systems ------------------------------------------------------------


def verify_clf_homotopy(
    s: SystemDef, V: ScalarCertificate, plan: SamplePlan | None = None, s_grid: int = 101, tol_dec: float = TOL_DEC
) -> CertificateReport:
    """``V`` stays a CLF along ``s f(x, u) - (1 - s) x`` for a control-affine ``f``.

    With unbounded inputs ``inf_u`` of the Lie derivative is ``-inf`` unless
    ``L_gV(x) = 0``; the sampled quantity is the bounded surrogate
    ``s min(L_fV, -|L_gV|) - (1 - s) <grad V, x>``.
    """
    s.require_control("verify_clf_homotopy")
    plan = plan or SamplePlan(total=2000)
    X = plan.points(s.n)
    X = X[~(V.kinks(X) | s.kinks(X))]
    _, g = V.grad(X)
    lf = np.einsum("ij,ij->i", g, s.drift_values(X))
    lg = np.einsum("ij,ijk->ik", g, s.input_matrix(X))
    q_clf = np.minimum(lf, -np.linalg.norm(lg, axis=1))
    radial = np.einsum("ij,ij->i", g, X)
    r = np.linalg.norm(X, axis=1)
    worst = None
    for sv in np.linspace(0.0, 1.0, s_grid):
        q = sv * q_clf - (1.0 - sv) * radial
        thr = -tol_dec * r * np.minimum(1.0, r)
        k = int(np.argmax(q - thr))
        if worst is None or q[k] - thr[k] > worst[0]:
            worst = (float(q[k] - thr[k]), float(sv), float(q[k]), X[k])
    excess, s_w, q_w, x_w = worst
    return CertificateReport(
        "clf-homotopy", FAIL if excess >= 0 else PASS, q_w, [x_w], tol_dec, len(X) * s_grid, plan.seed,
        {"condition": "clf-decrease", "s": s_w},
    )
