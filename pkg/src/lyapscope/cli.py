"""Command-line front end.

Exit codes: 0 pass, 1 fail or violated, 2 inconclusive or error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, catalog
from .errors import LyapscopeError
from .exprcore.parser import parse_expression
from .exprcore.system import SystemDocument, load_document
from .lyapcert.plan import SamplePlan, default_seed
from .lyapcert.report import CertificateReport, _jsonable

EXPLAIN = {
    "lyapunov": "Samples the annulus and checks V(0)=0, V(x)>0 and <grad V(x), F(x)> < 0 at every "
    "sample, plus a heuristic radial-growth test of V along rays beyond r_max.",
    "lyapunov-exp": "As 'lyapunov' but with the exponential decrease condition <grad V, F> <= -V.",
    "convex": "Checks midpoint convexity and the first-order inequality V(y) >= V(x) + <grad V(x), y-x> "
    "on sampled pairs, including on-axis pairs.",
    "convex-hessian": "Checks that the smallest Hessian eigenvalue of V is nonnegative at every sample.",
    "gconvex": "Pulls V back through the inverse diffeomorphism and checks chord convexity in the new "
    "coordinates, i.e. convexity along geodesics of the pullback metric.",
    "clf": "Checks that V is positive and that L_fV < 0 wherever L_gV vanishes, sampling the "
    "levelset points where <grad V, g> = 0.",
    "scale": "Reruns the Lyapunov check on theta*F for each theta; decrease is invariant under positive scaling.",
    "obstruct": "Searches for x != 0 with F(x) = lambda x, lambda >= 0. Any such point rules out a "
    "smooth convex Lyapunov function (or CLF when all input columns also vanish there).",
    "homotopy": "Checks <grad V_seg(x), H(s,x)> < 0 on an (s, x) grid along the straight-line or chained "
    "homotopy to the field -x.",
    "sontag": "Evaluates u = -(L_fV + sqrt(L_fV^2 + L_gV^4)) / L_gV and simulates the closed loop.",
    "singular": "Traces the levelset V = c and returns the points where <grad V, g> = 0.",
    "hautus": "Rank test of [A - lambda I | B] at every eigenvalue with nonnegative real part.",
    "lyapeq": "Solves A^T P + P A = -Q through the Kronecker-sum linear system.",
    "portrait": "Integrates the field from a lattice of initial conditions and exports each trajectory.",
}


class CliError(Exception):
    pass


# -- helpers -------------------------------------------------------------------------


def _load(ns, prefix="") -> SystemDocument:
    cat = getattr(ns, f"{prefix}catalog", None)
    path = getattr(ns, f"{prefix}system", None)
    if bool(cat) == bool(path):
        flag = prefix.replace("_", "-")
        raise CliError(f"give exactly one of --{flag}catalog or --{flag}system")
    return catalog.get(cat).document if cat else load_document(path)


def _plan(ns) -> SamplePlan:
    kw = {"seed": ns.seed if ns.seed is not None else default_seed()}
    for key in ("r_min", "r_max", "total", "radial", "angular"):
        v = getattr(ns, key, None)
        if v is not None:
            kw[key] = v
    return SamplePlan(**kw)


def _vec(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=float)


def _out(ns) -> Path:
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(ns, payload: dict, name: str = "report.json") -> None:
    payload = dict(payload)
    payload["version"] = __version__
    if ns.explain:
        payload["explanation"] = EXPLAIN.get(payload.get("check", ns.command), "")
    if not ns.no_timestamp:
        payload["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    (_out(ns) / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _report_payload(rep: CertificateReport, **extra) -> dict:
    d = rep.to_dict()
    d.update(extra)
    return d


def _add_source(p, prefix="", required=False):
    g = p.add_argument_group(f"{prefix.replace('_', ' ')}system source".strip())
    flag = prefix.replace("_", "-")
    g.add_argument(f"--{flag}catalog", dest=f"{prefix}catalog", metavar="ID", help="catalog entry id")
    g.add_argument(f"--{flag}system", dest=f"{prefix}system", metavar="FILE", help="system-definition JSON file")
    g.add_argument(f"--{flag}cert", dest=f"{prefix}cert", metavar="NAME", help="certificate name (default: first)")


def _add_plan(p):
    g = p.add_argument_group("sample plan")
    g.add_argument("--r-min", type=float, dest="r_min")
    g.add_argument("--r-max", type=float, dest="r_max")
    g.add_argument("--samples", type=int, dest="total", help="quasi-random sample count")
    g.add_argument("--radial", type=int)
    g.add_argument("--angular", type=int)


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="sampling seed (default: LYAPSCOPE_SEED or 1729)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--explain", action="store_true", help="describe the check in the report")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp for reproducible output")
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel stages")


# -- subcommands -----------------------------------------------------------------------


def cmd_verify(ns) -> int:
    from .lyapcert import scale_invariance_check, verify_convexity, verify_gconvex, verify_lyapunov

    doc = _load(ns)
    s, V, plan = doc.system, doc.certificate(ns.cert), _plan(ns)
    check = ns.check
    if check in ("lyapunov", "lyapunov-exp"):
        rep = verify_lyapunov(V, s, plan, exponential=check == "lyapunov-exp")
    elif check == "convex":
        rep = verify_convexity(V, plan, "chord")
    elif check == "convex-hessian":
        rep = verify_convexity(V, plan, "hessian")
    elif check == "gconvex":
        rep = verify_gconvex(V, doc.diffeo(ns.diffeo), plan)
    elif check == "clf":
        from .clf import verify_clf

        rep = verify_clf(s, V, plan)
    elif check == "scale":
        rep = scale_invariance_check(V, s, [float(t) for t in ns.thetas.split(",")], plan)
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown check {check}")
    _emit(ns, _report_payload(rep, system=s.name, certificate=V.name, plan=plan.to_dict()))
    return rep.exit_code


def cmd_obstruct(ns) -> int:
    from .obstruct import (
        OBSTRUCTED,
        VIOLATED,
        clf_obstruction_scan,
        nonholonomic_check,
        ray_alignment_search,
        write_alignment_csv,
    )

    doc = _load(ns)
    s, plan = doc.system, _plan(ns)
    mode = ns.mode or ("ray" if s.m == 0 else "clf")
    if mode == "ray":
        res = ray_alignment_search(s, plan)
        write_alignment_csv(res, _out(ns) / "alignment.csv")
        payload = dict(res.to_dict(), check="obstruct", mode=mode, system=s.name)
        code = 1 if res.verdict == VIOLATED else 0
    elif mode == "clf":
        res = clf_obstruction_scan(s, plan)
        payload = dict(res.to_dict(), check="obstruct", mode=mode, system=s.name)
        code = 1 if res.verdict == VIOLATED else 0
    else:
        res = nonholonomic_check(s)
        payload = {"check": "obstruct", "mode": mode, "verdict": res.verdict, "reason": res.reason,
                   "rank": res.rank, "system": s.name}
        code = 1 if res.verdict == OBSTRUCTED else 0
    _emit(ns, payload)
    return code


def cmd_homotopy(ns) -> int:
    from .homotopy import build_chain_homotopy, straight_line_path, verify_homotopy_stability, write_margins_csv

    d1 = _load(ns)
    V1 = d1.certificate(ns.cert)
    plan = _plan(ns) if ns.total is not None else _plan(ns).with_(total=2000)
    if ns.to_catalog or ns.to_system:
        d2 = _load(ns, "to_")
        path = build_chain_homotopy(d1.system, V1, d2.system, d2.certificate(ns.to_cert), plan)
    else:
        from .lyapcert import verify_convexity

        conv = verify_convexity(V1, plan)
        if not conv.passed:
            raise CliError(f"certificate {V1.name!r} is not convex on the samples (margin {conv.margin:.3e})")
        path = straight_line_path(d1.system, V1)
    rep = verify_homotopy_stability(path, plan, ns.s_grid)
    write_margins_csv(rep, _out(ns) / "margins.csv")
    payload = _report_payload(rep, path=path.label)
    payload["context"].pop("per_s", None)
    _emit(ns, payload)
    return rep.exit_code


def cmd_sontag(ns) -> int:
    from .clf import sontag_feedback
    from .simkit import integrate, write_trajectory_csv

    doc = _load(ns)
    s, V = doc.system, doc.certificate(ns.cert)
    law = sontag_feedback(s, V, _plan(ns))
    lo, hi, k = (float(v) for v in ns.grid.split(","))
    ax = np.linspace(lo, hi, int(k))
    if s.n == 1:
        X = ax[:, None]
    elif s.n == 2:
        G1, G2 = np.meshgrid(ax, ax, indexing="ij")
        X = np.column_stack([G1.ravel(), G2.ravel()])
    else:
        raise CliError("sontag grid output supports n <= 2")
    diag = law.diagnose(X)
    out = _out(ns)
    with open(out / "feedback.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(s.n)] + ["u", "LfV", "LgV", "near_singular"])
        for i, x in enumerate(X):
            w.writerow([f"{v:.17g}" for v in x] + [f"{diag[k_][i]:.17g}" for k_ in ("u", "LfV", "LgV")]
                       + [int(diag["near_singular"][i])])
    x0 = _vec(ns.x0) if ns.x0 else np.full(s.n, 1.0)
    tr = integrate(law.closed_loop(), x0, ns.t_final, conv_eps=ns.conv_eps)
    write_trajectory_csv(tr, out / "closed_loop.csv")
    live = (np.abs(diag["LfV"]) + np.abs(diag["LgV"])) > 0
    identity = diag["decrease"] + np.hypot(diag["LfV"], diag["LgV"] ** 2)
    payload = {
        "check": "sontag",
        "verdict": "pass" if tr.termination == "converged" else "fail",
        "feedback": law.metadata(),
        "grid_points": len(X),
        "near_singular_points": int(diag["near_singular"].sum()),
        "decrease_identity_residual": float(np.max(np.abs(identity[live]))) if live.any() else 0.0,
        "closed_loop": {"x0": x0, "termination": tr.termination, "t_end": float(tr.times[-1]),
                        "final": tr.final},
    }
    _emit(ns, payload)
    return 0 if payload["verdict"] == "pass" else 1


def cmd_singular(ns) -> int:
    from .clf import singularity_locus

    doc = _load(ns)
    s, V = doc.system, doc.certificate(ns.cert)
    if ns.g:
        g = [parse_expression(t, (s.n, 0), s.params) for t in ns.g.split(",")]
    else:
        if s.m < 1:
            raise CliError("give --g or use a control system (its first input column is taken)")
        g = [row[0] for row in s.inputs]
    res = singularity_locus(V, g, ns.level, ns.angles)
    out = _out(ns)
    for name, P in (("contour.csv", res.contour), ("roots.csv", res.roots)):
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "x2"])
            for p in P:
                w.writerow([f"{v:.17g}" for v in p])
    payload = {
        "check": "singular",
        "verdict": "pass" if res.count else "fail",
        "level": ns.level,
        "method": res.method,
        "roots": res.roots,
        "count": res.count,
        "residuals": res.residuals,
    }
    _emit(ns, payload)
    return 0 if res.count else 1


def cmd_hautus(ns) -> int:
    from .linstab import hautus_test, parse_matrix

    A = parse_matrix(ns.A)
    B = parse_matrix(ns.B).reshape(A.shape[0], -1)
    res = hautus_test(A, B)
    _emit(ns, dict(res.to_dict(), check="hautus", verdict="pass" if res.stabilizable else "fail"))
    return 0 if res.stabilizable else 1


def cmd_lyapeq(ns) -> int:
    from .linstab import parse_matrix, solve_lyapunov_eq

    A = parse_matrix(ns.A)
    Q = parse_matrix(ns.Q) if ns.Q else None
    sol = solve_lyapunov_eq(A, Q)
    _emit(ns, {"check": "lyapeq", "verdict": "pass", "P": sol.P, "residual": sol.residual,
               "min_eigenvalue": sol.min_eigenvalue})
    return 0


def cmd_portrait(ns) -> int:
    from .simkit import CONVERGED, export_portrait, lattice

    doc = _load(ns)
    lo, hi = (float(v) for v in ns.box.split(","))
    X0 = lattice(ns.lattice, lo, hi)
    files = export_portrait(doc.system, X0, ns.t_final, _out(ns), conv_eps=ns.conv_eps, svg=ns.svg,
                            workers=ns.threads)
    with open(Path(ns.out) / "index.csv", encoding="utf-8") as fh:
        terms = [row["termination"] for row in csv.DictReader(fh)]
    ok = all(t == CONVERGED for t in terms)
    _emit(ns, {"check": "portrait", "verdict": "pass" if ok else "fail", "trajectories": len(files),
               "converged": sum(t == CONVERGED for t in terms), "system": doc.system.name})
    return 0 if ok else 1


def cmd_catalog(ns) -> int:
    if ns.action == "list":
        for i in catalog.list_ids():
            print(f"{i}\t{catalog.get(i).provenance}")
        return 0
    if not ns.id:
        raise CliError("catalog show needs an id")
    print(json.dumps(catalog.raw(ns.id), indent=2))
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lyapscope", description="Numerical checks of (control) Lyapunov certificates.")
    p.add_argument("--version", action="version", version=f"lyapscope {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="verify a certificate")
    _add_source(v)
    v.add_argument("--check", required=True, choices=["lyapunov", "lyapunov-exp", "convex", "convex-hessian",
                                                      "gconvex", "clf", "scale"])
    v.add_argument("--diffeo", help="diffeomorphism name for gconvex")
    v.add_argument("--thetas", default="0.1,1,3", help="scale factors for --check scale")
    _add_plan(v)
    _add_common(v)

    o = sub.add_parser("obstruct", help="search for convexity obstructions")
    _add_source(o)
    o.add_argument("--mode", choices=["ray", "clf", "nonholonomic"])
    _add_plan(o)
    _add_common(o)

    h = sub.add_parser("homotopy", help="verify stability along a homotopy")
    _add_source(h)
    _add_source(h, "to_")
    h.add_argument("--s-grid", type=int, default=101, dest="s_grid")
    _add_plan(h)
    _add_common(h)

    so = sub.add_parser("sontag", help="Sontag feedback on a grid plus closed-loop simulation")
    _add_source(so)
    so.add_argument("--grid", default="-2,2,21", help="lo,hi,count per axis")
    so.add_argument("--x0", help="closed-loop initial condition, comma separated")
    so.add_argument("--t-final", type=float, default=10.0, dest="t_final")
    so.add_argument("--conv-eps", type=float, default=1e-3, dest="conv_eps")
    _add_plan(so)
    _add_common(so)

    sg = sub.add_parser("singular", help="levelset points where <grad V, g> = 0")
    _add_source(sg)
    sg.add_argument("--g", help="direction field components, comma separated expressions")
    sg.add_argument("--level", type=float, required=True)
    sg.add_argument("--angles", type=int, default=720)
    _add_common(sg)

    ha = sub.add_parser("hautus", help="PBH stabilizability test")
    ha.add_argument("--A", required=True)
    ha.add_argument("--B", required=True)
    _add_common(ha)

    le = sub.add_parser("lyapeq", help="solve A^T P + P A = -Q")
    le.add_argument("--A", required=True)
    le.add_argument("--Q")
    _add_common(le)

    po = sub.add_parser("portrait", help="export a phase portrait")
    _add_source(po)
    po.add_argument("--lattice", type=int, default=12)
    po.add_argument("--box", default="-3,3")
    po.add_argument("--t-final", type=float, default=300.0, dest="t_final")
    po.add_argument("--conv-eps", type=float, default=1e-6, dest="conv_eps")
    po.add_argument("--svg", action="store_true")
    _add_common(po)

    c = sub.add_parser("catalog", help="list or show built-in systems")
    c.add_argument("action", choices=["list", "show"])
    c.add_argument("id", nargs="?")
    return p


COMMANDS = {
    "verify": cmd_verify,
    "obstruct": cmd_obstruct,
    "homotopy": cmd_homotopy,
    "sontag": cmd_sontag,
    "singular": cmd_singular,
    "hautus": cmd_hautus,
    "lyapeq": cmd_lyapeq,
    "portrait": cmd_portrait,
    "catalog": cmd_catalog,
}


# options whose values may start with "-" (matrices, boxes, points)
VALUE_OPTS = {"--A", "--B", "--Q", "--box", "--x0", "--grid", "--g"}


def _glue_values(argv):
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in VALUE_OPTS and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ns = build_parser().parse_args(_glue_values(argv))
    try:
        return COMMANDS[ns.command](ns)
    except (CliError, LyapscopeError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"lyapscope {ns.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
