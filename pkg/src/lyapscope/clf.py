"""Control Lyapunov functions: Sontag feedback with its diagnostics, and the
levelset singularity locus."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import ExprDomainError, LyapscopeError, PreconditionError
from .exprcore.dual import evaluate_dual
from .exprcore.nodes import Const, Expr
from .exprcore.parser import parse_expression
from .exprcore.system import ScalarCertificate, SystemDef
from .lyapcert.plan import SamplePlan, unit_directions
from .lyapcert.report import FAIL, INCONCLUSIVE, PASS, CertificateReport

BRANCH_EPS = 1e-12
NEAR_SINGULAR = 1e-9
CLF_TOL = 1e-9


def _batch(X):
    X = np.asarray(X, dtype=float)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


def _field_values(fld, X) -> np.ndarray:
    if isinstance(fld, SystemDef):
        return fld.drift_values(X)
    if callable(fld):
        return np.atleast_2d(fld(X))
    cols = [np.broadcast_to(evaluate_dual(e, X, order=0)[0].val, (len(X),)) for e in fld]
    return np.column_stack(cols) if cols else np.zeros((len(X), 0))


def lie_derivative(V: ScalarCertificate, fld, x):
    """``<grad V(x), X(x)>``; ``fld`` may be a SystemDef (its drift is used) or a sequence of Exprs or callable."""
    X, single = _batch(x)
    _, g = V.grad(X)
    F = _field_values(fld, X)
    if F.shape != g.shape:
        raise ValueError(f"field has shape {F.shape[1:]}, certificate dimension is {V.n}")
    out = np.einsum("ij,ij->i", g, F)
    return float(out[0]) if single else out


def lie_pair(s: SystemDef, V: ScalarCertificate, X):
    """``(L_fV, L_gV)`` at rows of ``X``; ``L_gV`` has shape ``(N, m)``."""
    _, g = V.grad(X)
    a = np.einsum("ij,ij->i", g, s.drift_values(X))
    b = np.einsum("ij,ijk->ik", g, s.input_matrix(X))
    return a, b


def sontag_value(a, b, branch_eps: float = BRANCH_EPS):
    """``-(a + sqrt(a^2 + b^4)) / b`` (0 where ``|b| <= branch_eps``), cancellation-free.

    For ``a < 0`` the numerator is rewritten as ``b^4 / (sqrt(a^2 + b^4) - a)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    root = np.hypot(a, b * b)
    live = np.abs(b) > branch_eps
    bs = np.where(live, b, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        pos = -(a + root) / bs
        neg = -(bs**3) / np.where(a < 0, root - a, 1.0)
    return np.where(live, np.where(a >= 0, pos, neg), 0.0)


@dataclass
class FeedbackLaw:
    """Sontag's universal feedback for a single-input control-affine system."""

    system: SystemDef
    certificate: ScalarCertificate
    branch_eps: float = BRANCH_EPS
    near_singular: float = NEAR_SINGULAR

    def diagnose(self, x) -> dict:
        X, _ = _batch(x)
        a, b = lie_pair(self.system, self.certificate, X)
        b = b[:, 0]
        u = sontag_value(a, b, self.branch_eps)
        flag = (np.abs(b) > self.branch_eps) & (np.abs(b) < self.near_singular)
        return {"LfV": a, "LgV": b, "u": u, "near_singular": flag, "decrease": a + u * b}

    def __call__(self, x):
        X, single = _batch(x)
        u = self.diagnose(X)["u"]
        return float(u[0]) if single else u

    def closed_loop(self) -> Callable:
        """Field ``x -> f(x) + g(x) u(x)`` (batched or single point)."""

        def F(x):
            X, single = _batch(x)
            u = self.diagnose(X)["u"]
            out = self.system.drift_values(X) + self.system.input_matrix(X)[:, :, 0] * u[:, None]
            return out[0] if single else out

        return F

    def metadata(self) -> dict:
        return {
            "certificate": self.certificate.name,
            "system": self.system.name,
            "branch_eps": self.branch_eps,
            "near_singular_band": [self.branch_eps, self.near_singular],
        }


def _clf_points(s: SystemDef, V: ScalarCertificate, plan: SamplePlan) -> np.ndarray:
    X = plan.points(s.n)
    X = X[np.linalg.norm(X, axis=1) > 0]
    if s.n == 2 and s.m == 1:
        # points where L_gV vanishes are where the CLF condition can fail
        extra = []
        for c in _levels(V, plan):
            try:
                extra.append(singularity_locus(V, s, c, n_angles=180).roots)
            except (LyapscopeError, ArithmeticError):
                continue
        if extra:
            X = np.vstack([X] + [e for e in extra if len(e)])
    return X[~(V.kinks(X) | s.kinks(X))]


def _levels(V, plan, k=7):
    r = np.geomspace(plan.r_min, plan.r_max, k)
    vals = V.value(np.column_stack([r] + [np.zeros(k)] * (V.n - 1)))
    return [float(v) for v in vals if v > 0]


def verify_clf(
    s: SystemDef, V: ScalarCertificate, plan: SamplePlan | None = None, tol: float = CLF_TOL
) -> CertificateReport:
    """Sampled CLF condition: ``V > 0`` and ``L_fV < 0`` wherever ``L_gV = 0``.

    The recorded margin is ``min(L_fV, -|L_gV|)``, negative exactly when some
    input achieves decrease.
    """
    s.require_control("verify_clf")
    plan = plan or SamplePlan()
    X = _clf_points(s, V, plan)
    try:
        vals = V.value(X)
        a, b = lie_pair(s, V, X)
    except ExprDomainError as exc:
        return CertificateReport("clf", INCONCLUSIVE, float("nan"), [], tol, len(X), plan.seed,
                                 {"condition": "domain", "error": str(exc)})
    k = int(np.argmin(vals))
    if vals[k] <= tol * 0.1:
        return CertificateReport("clf", FAIL, float(-vals[k]), [X[k]], tol, len(X), plan.seed,
                                 {"condition": "positivity"})
    bn = np.linalg.norm(b, axis=1)
    q = np.where(bn < tol, a, np.minimum(a, -bn))
    thr = np.where(bn < tol, -tol * np.minimum(1.0, np.linalg.norm(X, axis=1)), 0.0)
    k = int(np.argmax(q - thr))
    verdict = FAIL if q[k] >= thr[k] else PASS
    return CertificateReport("clf", verdict, float(q[k]), [X[k]], tol, len(X), plan.seed,
                             {"condition": "clf-decrease", "LfV": float(a[k]), "LgV_norm": float(bn[k])})


def sontag_feedback(
    s: SystemDef, V: ScalarCertificate, plan: SamplePlan | None = None, check: bool = True
) -> FeedbackLaw:
    """Build Sontag's feedback after checking ``|L_gV| < 1e-9 => L_fV < -1e-9`` on the plan."""
    s.require_control("sontag_feedback")
    if s.m != 1:
        raise PreconditionError(f"Sontag's formula is single-input; system has m={s.m}")
    if check:
        plan = plan or SamplePlan()
        X = _clf_points(s, V, plan)
        a, b = lie_pair(s, V, X)
        bad = np.flatnonzero((np.abs(b[:, 0]) < NEAR_SINGULAR) & (a >= -CLF_TOL))
        if len(bad):
            k = bad[np.argmax(a[bad])]
            raise PreconditionError(
                f"{V.name} is not a CLF: L_gV={b[k, 0]:.3e} and L_fV={a[k]:.3e} at {X[k].tolist()}", X[k]
            )
    return FeedbackLaw(s, V)


@dataclass
class SCPProfile:
    radii: np.ndarray
    required: np.ndarray
    holds: bool
    reason: str
    margin_frac: float = 0.1

    def to_dict(self) -> dict:
        req = [float(v) if np.isfinite(v) else "inf" for v in self.required]
        return {"radii": self.radii.tolist(), "required_u": req, "scp": self.holds, "reason": self.reason}


def small_control_profile(
    s: SystemDef,
    V: ScalarCertificate,
    radii=(1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001),
    plan: SamplePlan | None = None,
    margin_frac: float = 0.1,
    directions: int = 64,
) -> SCPProfile:
    """Smallest ``|u|`` achieving decrease on spheres ``|x| = delta``, worst case over each sphere.

    The small control property is reported as holding when the profile is
    finite and non-increasing as ``delta`` shrinks, with its last entry zero
    or at most ``margin_frac`` times the first.
    """
    s.require_control("small_control_profile")
    if s.m != 1:
        raise PreconditionError("small control profile is single-input")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    seed = plan.seed if plan else 1729
    D = unit_directions(directions, s.n, seed)
    req = np.empty(len(radii))
    for i, d in enumerate(radii):
        a, b = lie_pair(s, V, d * D)
        b = np.abs(b[:, 0])
        with np.errstate(divide="ignore"):
            need = np.where(a < 0, 0.0, np.where(b > 0, a / np.where(b > 0, b, 1.0) * (1 + margin_frac), np.inf))
        req[i] = need.max()
    if not np.all(np.isfinite(req)):
        return SCPProfile(radii, req, False, "no control authority where drift fails to decrease", margin_frac)
    if np.any(np.diff(req) > 1e-12 * max(1.0, req.max())):
        return SCPProfile(radii, req, False, "required control does not shrink with the radius", margin_frac)
    if req[-1] == 0.0 or req[-1] <= margin_frac * req[0]:
        return SCPProfile(radii, req, True, "required control tends to zero", margin_frac)
    return SCPProfile(radii, req, False, "required control does not approach zero", margin_frac)


def feedback_magnitude_profile(law: FeedbackLaw, radii, directions: int = 64) -> np.ndarray:
    """``max |u(x)|`` over spheres ``|x| = delta``."""
    D = unit_directions(directions, law.system.n)
    return np.array([np.abs(law(d * D)).max() for d in radii])


# -- singularity locus -----------------------------------------------------------


def _g_fn(g, n=2) -> Callable:
    """Batched evaluator of the direction field ``g``."""
    if isinstance(g, SystemDef):
        g.require_control("singularity_locus")
        return lambda X: g.input_matrix(X)[:, :, 0]
    if isinstance(g, str):
        g = [g]
    g = list(g)
    if len(g) != n:
        raise ValueError(f"g needs {n} components")
    exprs = []
    for c in g:
        if isinstance(c, Expr):
            exprs.append(c)
        elif isinstance(c, str):
            exprs.append(parse_expression(c, (n, 0)))
        else:
            exprs.append(Const(float(c)))
    return lambda X: np.column_stack(
        [np.broadcast_to(evaluate_dual(e, X, order=0)[0].val, (len(X),)) for e in exprs]
    )


@dataclass
class LocusResult:
    roots: np.ndarray
    contour: np.ndarray
    h: np.ndarray
    level: float
    method: str
    residuals: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.roots)


def _ray_radius(V, D, c, max_doublings=60):
    """Radius where ``V(r d) = c`` for each unit row of ``D`` (vectorized bisection)."""
    lo = np.zeros(len(D))
    hi = np.ones(len(D))
    for _ in range(max_doublings):
        below = V.value(hi[:, None] * D) <= c
        if not below.any():
            break
        lo = np.where(below, hi, lo)
        hi = np.where(below, 2.0 * hi, hi)
    else:
        raise LyapscopeError(f"level {c} not reached along some ray; c is outside the range of V")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = V.value(mid[:, None] * D) <= c
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(1.0, hi)):
            break
    return 0.5 * (lo + hi), hi


def _multiple_crossings(V, D, rmax, c, k=64) -> bool:
    r = np.linspace(0.0, 1.0, k + 1)[1:] * rmax[:, None]
    vals = V.value((r[:, :, None] * D[:, None, :]).reshape(-1, D.shape[1])).reshape(r.shape) - c
    changes = np.sum(np.diff(np.sign(vals), axis=1) != 0, axis=1)
    return bool(np.any(changes > 1))


def _newton_project(V, gfn, c, x0, iters=50):
    """Newton on ``(V(x) - c, <grad V, g>(x)) = 0`` with a finite-difference ``grad h``."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(iters):
        v, gv, H = V.hess(x[None])
        gx = gfn(x[None])[0]
        h = float(gv[0] @ gx)
        eps = 1e-7 * max(1.0, np.linalg.norm(x))
        Jg = np.column_stack([(gfn((x + eps * e)[None])[0] - gfn((x - eps * e)[None])[0]) / (2 * eps) for e in np.eye(2)])
        dh = H[0] @ gx + Jg.T @ gv[0]
        J = np.vstack([gv[0], dh])
        r = np.array([v[0] - c, h])
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        x = x - step
        if np.linalg.norm(step) < 1e-15 * max(1.0, np.linalg.norm(x)):
            break
    return x


def singularity_locus(V: ScalarCertificate, g, c: float, n_angles: int = 720) -> LocusResult:
    """Points on ``{V = c}`` where ``<grad V, g> = 0``.

    The levelset is traced by radial bisection at ``n_angles`` angles; sign
    changes of ``h = <grad V, g>`` along the trace are refined with Brent's
    method in the angle. Levelsets crossing some ray more than once fall
    back to marching squares plus Newton refinement.
    """
    if V.n != 2:
        raise PreconditionError("singularity_locus is implemented for n = 2")
    if not c > 0:
        raise ValueError("level c must be positive")
    gfn = _g_fn(g)
    th = 2 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
    D = np.column_stack([np.cos(th), np.sin(th)])
    r, rhi = _ray_radius(V, D, c)
    if _multiple_crossings(V, D, 2.0 * rhi, c):
        return _locus_contour(V, gfn, c, 2.0 * rhi.max())
    P = r[:, None] * D
    _, gv = V.grad(P)
    h = np.einsum("ij,ij->i", gv, gfn(P))

    def point(t):
        d = np.array([[np.cos(t), np.sin(t)]])
        rr, _ = _ray_radius(V, d, c)
        return rr[0] * d[0]

    def hfun(t):
        p = point(t)
        _, gp = V.grad(p[None])
        return float(gp[0] @ gfn(p[None])[0])

    roots = []
    for i in range(n_angles):
        j = (i + 1) % n_angles
        t0, t1 = th[i], th[j] + (2 * np.pi if j == 0 else 0.0)
        if h[i] == 0.0:
            roots.append(P[i])
        elif h[i] * h[j] < 0:
            t = brentq(hfun, t0, t1, xtol=1e-15, maxiter=200)
            roots.append(point(t))
    roots = np.array(roots).reshape(-1, 2)
    return _finish(V, gfn, c, roots, P, h, "radial")


def _locus_contour(V, gfn, c, R, k=401):
    from skimage.measure import find_contours

    ax = np.linspace(-R, R, k)
    G1, G2 = np.meshgrid(ax, ax, indexing="ij")
    vals = V.value(np.column_stack([G1.ravel(), G2.ravel()])).reshape(k, k)
    step = ax[1] - ax[0]
    roots, pts, hs = [], [], []
    for cont in find_contours(vals, c):
        P = -R + cont * step
        _, gv = V.grad(P)
        h = np.einsum("ij,ij->i", gv, gfn(P))
        pts.append(P)
        hs.append(h)
        for i in np.flatnonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0):
            w = h[i] / (h[i] - h[i + 1])
            roots.append(_newton_project(V, gfn, c, P[i] + w * (P[i + 1] - P[i])))
    roots = np.array(roots).reshape(-1, 2)
    P = np.vstack(pts) if pts else np.zeros((0, 2))
    h = np.concatenate(hs) if hs else np.zeros(0)
    return _finish(V, gfn, c, roots, P, h, "contour")


def _finish(V, gfn, c, roots, P, h, method):
    if len(roots):
        # drop duplicates from adjacent brackets
        keep = [0]
        for i in range(1, len(roots)):
            if np.min(np.linalg.norm(roots[keep] - roots[i], axis=1)) > 1e-9:
                keep.append(i)
        roots = roots[keep]
        _, gv = V.grad(roots)
        res = {
            "level": float(np.max(np.abs(V.value(roots) - c))),
            "inner": float(np.max(np.abs(np.einsum("ij,ij->i", gv, gfn(roots))))),
        }
    else:
        res = {}
        warnings.warn(f"no singular point found on level {c}", RuntimeWarning, stacklevel=3)
    return LocusResult(roots, P, h, c, method, res)
