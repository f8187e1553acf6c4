"""Integration of vector fields for empirical attractivity checks and phase portraits."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ExprDomainError
from .exprcore.system import SystemDef
from .lyapcert.plan import unit_directions

CONV_EPS = 1e-6
DIV_BOUND = 1e6
H_MIN = 1e-14

T_FINAL, CONVERGED, DIVERGED, UNDERFLOW = "t_final", "converged", "diverged", "step_underflow"

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def as_field(s) -> Callable:
    """Single-point evaluator ``x -> dx/dt`` from a SystemDef or callable."""
    if isinstance(s, SystemDef):
        s.require_autonomous("integration")
        return s.compiled()
    return s


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray = field(repr=False)
    termination: str
    n_steps: int = 0
    n_rejected: int = 0
    n_fev: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def sample(self, t) -> np.ndarray:
        """States at times ``t`` by cubic Hermite interpolation between steps."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise ValueError("sample times outside the integrated interval")
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        h = (t1 - t0)[:, None]
        th = ((t - t0) / (t1 - t0))[:, None]
        y0, y1 = self.states[i], self.states[i + 1]
        f0, f1 = self.derivs[i], self.derivs[i + 1]
        h00 = 2 * th**3 - 3 * th**2 + 1
        h10 = th**3 - 2 * th**2 + th
        h01 = -2 * th**3 + 3 * th**2
        h11 = th**3 - th**2
        out = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
        exact = t == self.times[np.minimum(i + 1, len(self.times) - 1)]
        out[exact] = self.states[i + 1][exact]
        return out


def _safe(f, y):
    try:
        v = np.asarray(f(y), dtype=float)
    except (ExprDomainError, OverflowError, ZeroDivisionError):
        return None
    return v if np.all(np.isfinite(v)) else None


def _initial_step(f, y0, f0, rtol, atol, t_final):
    sc = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h, t_final)


def integrate(
    f,
    x0,
    t_final: float,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    h0: float | None = None,
    conv_eps: float | None = None,
    div_bound: float | None = DIV_BOUND,
    method: str = "dopri5",
    max_steps: int = 1_000_000,
) -> Trajectory:
    """Integrate ``dx/dt = f(x)`` from ``x0`` over ``[0, t_final]``.

    ``dopri5`` is the adaptive Dormand-Prince 5(4) pair with PI step-size
    control; ``rk4`` is classical fixed-step Runge-Kutta with step ``h0``.
    Integration stops early when ``|x| < conv_eps`` or ``|x| > div_bound``.
    """
    if not t_final > 0:
        raise ValueError("t_final must be positive")
    f = as_field(f)
    y = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    fy = _safe(f, y)
    if fy is None:
        raise ExprDomainError(f"field not finite at the initial point {y.tolist()}")
    T, Y, D = [0.0], [y.copy()], [fy.copy()]
    nfev, nrej, t = 1, 0, 0.0

    def stop_reason(yv):
        r = np.linalg.norm(yv)
        if not np.isfinite(r) or (div_bound is not None and r > div_bound):
            return DIVERGED
        if conv_eps is not None and r < conv_eps:
            return CONVERGED
        return None

    reason = stop_reason(y)
    if method == "rk4":
        h = h0 or t_final / 1000
        while reason is None and t < t_final:
            hs = min(h, t_final - t)
            k1 = fy
            k2 = _safe(f, y + 0.5 * hs * k1)
            k3 = None if k2 is None else _safe(f, y + 0.5 * hs * k2)
            k4 = None if k3 is None else _safe(f, y + hs * k3)
            nfev += 3
            if k4 is None:
                reason = DIVERGED
                break
            y = y + hs / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t_final if t_final - t <= hs else t + hs
            fy = _safe(f, y)
            nfev += 1
            T.append(t)
            Y.append(y.copy())
            D.append(fy if fy is not None else np.full_like(y, np.nan))
            reason = DIVERGED if fy is None else stop_reason(y)
        return Trajectory(np.array(T), np.array(Y), np.array(D), reason or T_FINAL, len(T) - 1, 0, nfev)
    if method != "dopri5":
        raise ValueError(f"unknown method {method!r}")

    h = h0 or _initial_step(f, y, fy, rtol, atol, t_final)
    err_prev = 1.0
    K = np.empty((7, len(y)))
    steps = 0
    while reason is None and t < t_final:
        if steps >= max_steps:
            reason = UNDERFLOW
            break
        h = min(h, t_final - t)
        if h < H_MIN * max(1.0, abs(t)):
            reason = UNDERFLOW
            break
        K[0] = fy
        ok = True
        for i in range(1, 7):
            ki = _safe(f, y + h * (np.asarray(_A[i]) @ K[:i]))
            nfev += 1
            if ki is None:
                ok = False
                break
            K[i] = ki
        if not ok:
            h *= 0.2
            nrej += 1
            continue
        y_new = y + h * (_B5 @ K)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((h * (_E @ K) / sc) ** 2))
        if not np.isfinite(err):
            h *= 0.2
            nrej += 1
            continue
        if err <= 1.0:
            t = t_final if t_final - t <= h else t + h
            y, fy = y_new, K[6].copy()
            T.append(t)
            Y.append(y.copy())
            D.append(fy.copy())
            steps += 1
            fac = 0.9 * max(err, 1e-10) ** (-0.7 / 5) * err_prev ** (0.4 / 5)
            h *= min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            reason = stop_reason(y)
        else:
            nrej += 1
            h *= max(0.2, 0.9 * err ** (-1 / 5))
    return Trajectory(np.array(T), np.array(Y), np.array(D), reason or T_FINAL, steps, nrej, nfev)


# -- attractivity ------------------------------------------------------------------


def ring_points(radii, angles: int, n: int = 2, seed: int = 1729) -> np.ndarray:
    D = unit_directions(angles, n, seed)
    return np.vstack([r * D for r in radii])


def lattice(k: int, lo: float, hi: float) -> np.ndarray:
    """``k x k`` grid of initial conditions on ``[lo, hi]^2``."""
    ax = np.linspace(lo, hi, k)
    G1, G2 = np.meshgrid(ax, ax, indexing="ij")
    return np.column_stack([G1.ravel(), G2.ravel()])


def _run_all(f, X0, t_final, workers, **kw):
    job = lambda x0: integrate(f, x0, t_final, **kw)  # noqa: E731
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(job, X0))
    return [job(x0) for x0 in X0]


@dataclass
class GasReport:
    passed: bool
    initial_conditions: np.ndarray
    trajectories: list = field(repr=False)
    slowest: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    sup_norm: float = 0.0

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "trajectories": len(self.trajectories),
            "slowest": self.slowest,
            "failures": self.failures,
            "sup_norm": self.sup_norm,
        }


def empirical_gas(
    s,
    initial=None,
    radii=(0.5, 1.0, 2.0),
    angles: int = 8,
    t_final: float = 20.0,
    conv_eps: float = CONV_EPS,
    rtol: float = 1e-7,
    atol: float = 1e-10,
    workers: int | None = None,
) -> GasReport:
    """Integrate from every initial condition; pass iff all reach ``|x| < conv_eps`` in time."""
    f = as_field(s)
    if initial is None:
        n = s.n if isinstance(s, SystemDef) else 2
        initial = ring_points(radii, angles, n)
    X0 = np.atleast_2d(np.asarray(initial, dtype=float))
    trajs = _run_all(f, X0, t_final, workers, conv_eps=conv_eps, rtol=rtol, atol=atol)
    failures = [
        {"x0": x0.tolist(), "termination": tr.termination, "t_end": float(tr.times[-1])}
        for x0, tr in zip(X0, trajs)
        if tr.termination != CONVERGED
    ]
    k = int(np.argmax([tr.times[-1] for tr in trajs]))
    sup = max(float(np.max(np.linalg.norm(tr.states, axis=1))) for tr in trajs)
    slow = {"x0": X0[k].tolist(), "t_converge": float(trajs[k].times[-1]), "termination": trajs[k].termination}
    return GasReport(not failures and np.isfinite(sup), X0, trajs, slow, failures, sup)


# -- export ------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trajectory_csv(tr: Trajectory, path) -> Path:
    path = Path(path)
    n = tr.states.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
        for t, y in zip(tr.times, tr.states):
            w.writerow([_fmt(t)] + [_fmt(v) for v in y])
    return path


def _svg(trajs, box, size=600) -> str:
    lo, hi = box
    scale = size / (hi - lo)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for tr in trajs:
        P = tr.states[:, :2]
        u = (P[:, 0] - lo) * scale
        v = (hi - P[:, 1]) * scale
        pts = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(u, v))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="0.8"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def export_portrait(
    s,
    initial,
    t_final: float,
    out,
    conv_eps: float = CONV_EPS,
    svg: bool = False,
    box=None,
    rtol: float = 1e-7,
    atol: float = 1e-10,
    t_samples: int | None = None,
    workers: int | None = None,
) -> list:
    """One CSV per trajectory plus ``index.csv`` (and ``portrait.svg``) in ``out``.

    With ``t_samples`` each CSV holds that many uniformly spaced dense-output
    samples instead of the raw accepted steps.
    """
    X0 = np.atleast_2d(np.asarray(initial, dtype=float))
    if X0.shape[1] != 2:
        raise ValueError("portrait export is 2-D")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    f = as_field(s)
    trajs = _run_all(f, X0, t_final, workers, conv_eps=conv_eps, rtol=rtol, atol=atol)
    files = []
    with open(out / "index.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x0_1", "x0_2", "termination", "t_end", "file"])
        for i, (x0, tr) in enumerate(zip(X0, trajs)):
            if t_samples:
                ts = np.linspace(tr.times[0], tr.times[-1], t_samples)
                tr = Trajectory(ts, tr.sample(ts), np.zeros((len(ts), 2)), tr.termination)
            name = f"traj_{i:03d}.csv"
            write_trajectory_csv(tr, out / name)
            files.append(out / name)
            w.writerow([i, _fmt(x0[0]), _fmt(x0[1]), tr.termination, _fmt(tr.times[-1]), name])
    if svg:
        if box is None:
            m = 1.1 * float(np.max(np.abs(X0)))
            box = (-m, m)
        (out / "portrait.svg").write_text(_svg(trajs, box), encoding="utf-8")
    return files
