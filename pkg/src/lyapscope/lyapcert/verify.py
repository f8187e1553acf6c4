"""Sampled checks of Lyapunov conditions and of (geodesic) convexity.

Every check discretizes a "for all x" statement over a :class:`SamplePlan`;
a pass means "no violation at this resolution", never a proof.
"""

from __future__ import annotations

import numpy as np

from ..errors import ExprDomainError, PreconditionError
from ..exprcore.compile import compile_vector
from ..exprcore.dual import eval_grad, eval_hessian
from ..exprcore.system import DiffeoDef, ScalarCertificate, SystemDef
from .plan import SamplePlan
from .report import FAIL, INCONCLUSIVE, PASS, CertificateReport

TOL_POS = 1e-10
TOL_ZERO = 1e-10
TOL_DEC = 1e-9
TOL_CONVEX = 1e-9
ROUNDTRIP_TOL = 1e-8
OCTAVES = (2.0, 4.0, 8.0)


def _inconclusive(check, exc: ExprDomainError, plan, tol, n_samples) -> CertificateReport:
    witness = [] if exc.points is None or not len(exc.points) else [exc.points[0]]
    return CertificateReport(
        check,
        INCONCLUSIVE,
        float("nan"),
        witness,
        tol,
        n_samples,
        plan.seed if plan else None,
        {"condition": "domain", "error": str(exc)},
    )


def _dims(V: ScalarCertificate, s: SystemDef | None = None):
    if s is not None and s.n != V.n:
        raise PreconditionError(f"certificate dimension {V.n} does not match system dimension {s.n}")


def _worst(q, thr):
    """Index of the largest excess ``q - thr`` and whether it is a violation."""
    excess = q - thr
    k = int(np.argmax(excess))
    return k, bool(excess[k] >= 0.0)


def decrease_threshold(X, F, tol_dec=TOL_DEC):
    """Pointwise bound the Lie derivative must stay strictly below."""
    r = np.linalg.norm(X, axis=1)
    return -tol_dec * r * np.minimum(1.0, np.linalg.norm(F, axis=1))


def verify_lyapunov(
    V: ScalarCertificate,
    s: SystemDef,
    plan: SamplePlan | None = None,
    *,
    tol_pos: float = TOL_POS,
    tol_zero: float = TOL_ZERO,
    tol_dec: float = TOL_DEC,
    exponential: bool = False,
    points=None,
) -> CertificateReport:
    """Check positivity, ``V(0)=0``, strict decrease and (heuristically) radial growth.

    With ``exponential`` the decrease condition becomes ``<grad V, F> <= -V``.
    """
    s.require_autonomous("verify_lyapunov")
    _dims(V, s)
    plan = plan or SamplePlan()
    X = plan.points(V.n) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    X = X[np.linalg.norm(X, axis=1) > 0]
    keep = ~(V.kinks(X) | s.kinks(X))
    X = X[keep]
    n_samples = len(X)
    check = "lyapunov-exp" if exponential else "lyapunov"
    dirs = plan.ray_directions(V.n)
    radii = plan.r_max * np.asarray(OCTAVES)
    try:
        v0 = float(V.value(np.zeros(V.n))[0])
        vals, grads = V.grad(X)
        F = s.drift_values(X)
        ray_vals = np.stack([V.value(r * dirs) for r in radii], axis=1)
    except ExprDomainError as exc:
        return _inconclusive(check, exc, plan, tol_dec, n_samples)

    lie = np.einsum("ij,ij->i", grads, F)
    if exponential:
        dec_thr = -vals + tol_dec * np.linalg.norm(X, axis=1)
        # non-strict: violated only when strictly above the bound
        dec_q = lie - 1e-300
    else:
        dec_thr = decrease_threshold(X, F, tol_dec)
        dec_q = lie
    ray_q = (ray_vals[:, :-1] - ray_vals[:, 1:]).ravel()
    ray_pts = np.repeat(dirs, len(radii) - 1, axis=0) * np.tile(radii[:-1], len(dirs))[:, None]

    conds = []  # (name, margins, thresholds, witnesses)
    conds.append(("zero", np.array([abs(v0)]), np.array([tol_zero + 1e-300]), np.zeros((1, V.n))))
    conds.append(("positivity", -vals, np.full(len(vals), -tol_pos), X))
    conds.append(("decrease", dec_q, dec_thr, X))
    conds.append(("radial", ray_q, np.zeros(len(ray_q)), ray_pts))

    summary, failed = {}, None
    for name, q, thr, W in conds:
        if len(q) == 0:
            continue
        k, violated = _worst(q, thr)
        if name == "zero":
            violated = bool(q[0] > tol_zero)
        summary[name] = float(q[k])
        if violated and failed is None:
            failed = (name, q, thr, W, k)
    if failed is None:
        k, _ = _worst(dec_q, dec_thr)
        return CertificateReport(
            check,
            PASS,
            float(lie[k]),
            [X[k]],
            tol_dec,
            n_samples,
            plan.seed,
            {"condition": "decrease", "threshold": float(dec_thr[k]), "heuristic": ["radial"]},
            summary,
        )
    name, q, thr, W, k = failed
    margin = float(lie[k]) if name == "decrease" else float(q[k])
    return CertificateReport(
        check,
        FAIL,
        margin,
        [W[k]],
        {"zero": tol_zero, "positivity": tol_pos}.get(name, tol_dec),
        n_samples,
        plan.seed,
        {"condition": name, "threshold": float(thr[k]), "heuristic": ["radial"]},
        summary,
    )


def lyapunov_witness_value(report: CertificateReport, V: ScalarCertificate, s: SystemDef) -> float:
    """Recompute the quantity behind a Lyapunov report at its witness.

    Uses the compiled scalar path, independent of the batched sampler.
    """
    xw = np.asarray(report.witness[0], dtype=float)
    cond = report.context["condition"]
    v = float(compile_vector([V.body])(xw)[0])
    if cond == "zero":
        return abs(v)
    if cond == "positivity":
        return -v
    if cond == "decrease":
        _, g = eval_grad(V.body, xw)
        return float(g @ s.compiled()(xw))
    if cond == "radial":
        fn = compile_vector([V.body])
        return float(fn(xw)[0] - fn(2.0 * xw)[0])
    raise ValueError(f"no recomputation for condition {cond!r}")


# -- convexity ---------------------------------------------------------------


def chord_pairs(X, plan: SamplePlan, n: int):
    """Random pairs from ``X`` plus all on-axis pairs."""
    rng = np.random.default_rng(plan.seed)
    perm = rng.permutation(len(X))
    P, Q = [X], [X[perm]]
    a = plan.axis_values()
    i, j = np.triu_indices(len(a), 1)
    for k in range(n):
        p = np.zeros((len(i), n))
        q = np.zeros((len(i), n))
        p[:, k], q[:, k] = a[i], a[j]
        P.append(p)
        Q.append(q)
    return np.vstack(P), np.vstack(Q)


def _chord_report(check, V: ScalarCertificate, P, Q, tol, plan, context=None):
    M = 0.5 * (P + Q)
    keep = ~(V.kinks(P) | V.kinks(Q) | V.kinks(M)) & np.any(P != Q, axis=1)
    P, Q, M = P[keep], Q[keep], M[keep]
    try:
        vp, gp = V.grad(P)
        vq, gq = V.grad(Q)
        vm = V.value(M)
    except ExprDomainError as exc:
        return _inconclusive(check, exc, plan, tol, len(P))
    mid_q = vm - 0.5 * (vp + vq)
    grad_pq = vp + np.einsum("ij,ij->i", gp, Q - P) - vq
    grad_qp = vq + np.einsum("ij,ij->i", gq, P - Q) - vp
    cands = [
        ("midpoint", mid_q, P, Q),
        ("gradient", grad_pq, P, Q),
        ("gradient", grad_qp, Q, P),
    ]
    best = None
    summary = {}
    for name, q, A, B in cands:
        k = int(np.argmax(q))
        summary[name] = max(summary.get(name, -np.inf), float(q[k]))
        if best is None or q[k] > best[1]:
            best = (name, float(q[k]), A[k], B[k])
    name, margin, a, b = best
    ctx = {"condition": name, "threshold": tol, "mode": "chord"}
    ctx.update(context or {})
    return CertificateReport(
        check, FAIL if margin > tol else PASS, margin, [a, b], tol, len(P), plan.seed, ctx, summary
    )


def _hessian_report(check, V: ScalarCertificate, X, tol, plan):
    X = X[~V.kinks(X)]
    try:
        _, _, H = V.hess(X)
    except ExprDomainError as exc:
        return _inconclusive(check, exc, plan, tol, len(X))
    lam = np.linalg.eigvalsh(H)[:, 0]
    k = int(np.argmin(lam))
    q = -float(lam[k])
    return CertificateReport(
        check,
        FAIL if q > tol else PASS,
        q,
        [X[k]],
        tol,
        len(X),
        plan.seed,
        {"condition": "hessian", "threshold": tol, "mode": "hessian", "min_eigenvalue": float(lam[k])},
        {"hessian": q},
    )


def verify_convexity(
    V: ScalarCertificate,
    plan: SamplePlan | None = None,
    mode: str = "chord",
    *,
    tol: float = TOL_CONVEX,
    pairs=None,
    points=None,
) -> CertificateReport:
    """Convexity of ``V`` by chord/gradient inequalities or Hessian eigenvalues.

    ``pairs`` (chord mode, shape ``(k, 2, n)``) or ``points`` (hessian mode)
    replace the plan's samples.
    """
    plan = plan or SamplePlan()
    if mode == "chord":
        if pairs is not None:
            pairs = np.asarray(pairs, dtype=float).reshape(-1, 2, V.n)
            P, Q = pairs[:, 0], pairs[:, 1]
        else:
            X = np.vstack([plan.bulk(V.n), plan.shells(V.n)])
            P, Q = chord_pairs(X, plan, V.n)
        return _chord_report("convex", V, P, Q, tol, plan)
    if mode == "hessian":
        X = plan.points(V.n) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
        return _hessian_report("convex-hessian", V, X, tol, plan)
    raise ValueError(f"unknown convexity mode {mode!r}")


def check_diffeo(phi: DiffeoDef, X, tol: float = ROUNDTRIP_TOL) -> dict:
    """Round-trip errors and Jacobian conditioning of ``phi`` at ``X``.

    Raises :class:`PreconditionError` naming the worst point on failure.
    """
    Y = phi.apply(X)
    e1 = np.linalg.norm(phi.apply_inverse(Y) - X, axis=1) / np.maximum(1.0, np.linalg.norm(X, axis=1))
    e2 = np.linalg.norm(phi.apply(phi.apply_inverse(X)) - X, axis=1) / np.maximum(
        1.0, np.linalg.norm(X, axis=1)
    )
    err = np.maximum(e1, e2)
    k = int(np.argmax(err))
    if err[k] > tol:
        raise PreconditionError(
            f"diffeomorphism {phi.name} fails round trip by {err[k]:.3e} at {X[k].tolist()}", X[k]
        )
    cond = np.linalg.cond(phi.jacobian(X))
    j = int(np.argmax(cond))
    if not np.isfinite(cond[j]):
        raise PreconditionError(f"Jacobian of {phi.name} singular at {X[j].tolist()}", X[j])
    return {"roundtrip_error": float(err[k]), "max_condition": float(cond[j])}


def verify_gconvex(
    V: ScalarCertificate,
    phi: DiffeoDef,
    plan: SamplePlan | None = None,
    *,
    tol: float = TOL_CONVEX,
) -> CertificateReport:
    """Geodesic convexity for the metric pulled back from the Euclidean one by ``phi``.

    Geodesics are ``t -> phi^{-1}((1-t) phi(x) + t phi(y))``, so the check is
    plain chord convexity of ``y -> V(phi^{-1}(y))`` at mapped sample pairs.
    """
    plan = plan or SamplePlan()
    X = np.vstack([plan.bulk(V.n), plan.shells(V.n)])
    X = X[~(phi.kinks(X) | V.kinks(X))]
    try:
        diag = check_diffeo(phi, X)
        P, Q = chord_pairs(X, plan, V.n)
        n_rand = len(X)
        # random pairs are mapped into y-coordinates; axis pairs are taken there directly
        P = np.vstack([phi.apply(P[:n_rand]), P[n_rand:]])
        Q = np.vstack([phi.apply(Q[:n_rand]), Q[n_rand:]])
    except ExprDomainError as exc:
        return _inconclusive("gconvex", exc, plan, tol, len(X))
    W = ScalarCertificate(V.n, phi.pullback(V.body), f"{V.name}@{phi.name}^-1")
    rep = _chord_report("gconvex", W, P, Q, tol, plan, dict(diag, diffeo=phi.name))
    # report witnesses in the original coordinates
    if rep.witness:
        try:
            rep.context["witness_y"] = [np.asarray(w).tolist() for w in rep.witness]
            rep.witness = [phi.apply_inverse(np.asarray(w))[0] for w in rep.witness]
        except ExprDomainError:
            pass
    return rep


def convexity_witness_value(report: CertificateReport, V: ScalarCertificate) -> float:
    """Recompute a convexity report's quantity at its witness (scalar path)."""
    cond = report.context["condition"]
    if cond == "hessian":
        _, _, H = eval_hessian(V.body, np.asarray(report.witness[0], dtype=float))
        return -float(np.linalg.eigvalsh(H)[0])
    a, b = (np.asarray(w, dtype=float) for w in report.witness)
    fn = compile_vector([V.body])
    if cond == "midpoint":
        return float(fn(0.5 * (a + b))[0] - 0.5 * (fn(a)[0] + fn(b)[0]))
    va, ga = eval_grad(V.body, a)
    return float(va + ga @ (b - a) - fn(b)[0])


def scale_invariance_check(
    V: ScalarCertificate,
    s: SystemDef,
    thetas=(0.1, 1.0, 3.0),
    plan: SamplePlan | None = None,
) -> CertificateReport:
    """Re-run :func:`verify_lyapunov` on ``theta * F`` for each ``theta > 0``."""
    plan = plan or SamplePlan()
    if any(t <= 0 for t in thetas):
        raise ValueError("scale factors must be positive")
    base = verify_lyapunov(V, s, plan)
    reports = {1.0: base}
    for t in thetas:
        if float(t) not in reports:
            reports[float(t)] = verify_lyapunov(V, s.scaled(t), plan)
    worst = max(reports.values(), key=lambda r: (r.verdict != PASS, r.margin))
    verdict = PASS
    if any(r.verdict == INCONCLUSIVE for r in reports.values()):
        verdict = INCONCLUSIVE
    if any(r.verdict == FAIL for r in reports.values()):
        verdict = FAIL
    return CertificateReport(
        "scale-invariance",
        verdict,
        worst.margin,
        worst.witness,
        worst.tolerance,
        sum(r.samples_used for r in reports.values()),
        plan.seed,
        {"base_verdict": base.verdict, "condition": worst.context.get("condition")},
        {f"theta={t:g}": r.margin for t, r in sorted(reports.items())},
    )
