"""Small dense linear-stability toolkit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from .errors import ConvergenceError, PreconditionError

MAX_DIM = 32
CRHP_MARGIN = -1e-10
RANK_RTOL = 1e-9


def _square(A, name="A") -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if A.shape[0] > MAX_DIM:
        raise ValueError(f"{name} is {A.shape[0]}x{A.shape[0]}, above the {MAX_DIM}x{MAX_DIM} cap")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def parse_matrix(text: str) -> np.ndarray:
    """``"0,1;0,0"`` (rows split by ``;``) or a JSON nested list."""
    text = text.strip()
    if text.startswith("["):
        import json

        return np.atleast_2d(np.asarray(json.loads(text), dtype=float))
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([[float(v) for v in r.split(",")] for r in rows], dtype=float)


def eigenvalues(A, check_residual: bool = False) -> np.ndarray:
    """All eigenvalues with multiplicity (LAPACK Hessenberg + shifted QR).

    With ``check_residual`` the eigenpairs must satisfy
    ``|Av - lam v| <= 1e-8 |A|``.
    """
    A = _square(A)
    try:
        if check_residual:
            w, Vr = np.linalg.eig(A)
            scale = max(np.linalg.norm(A, 2), 1e-300)
            res = np.linalg.norm(A @ Vr - Vr * w, axis=0)
            if np.any(res > 1e-8 * scale):
                raise ConvergenceError("eigenpair residual above 1e-8 |A|", residual=float(res.max()))
            return w
        return np.linalg.eigvals(A)
    except LinAlgError as exc:
        raise ConvergenceError(f"eigenvalue iteration did not converge: {exc}") from exc


def spectral_abscissa(A) -> float:
    return float(np.max(eigenvalues(A).real))


def rank(M, rtol: float = RANK_RTOL) -> int:
    """Numerical rank from singular values (threshold ``rtol * sigma_max``)."""
    sv = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass
class HautusResult:
    stabilizable: bool
    failing_eigenvalues: list
    tested: list

    def __iter__(self):
        return iter((self.stabilizable, self.failing_eigenvalues))

    def to_dict(self) -> dict:
        c = lambda z: [float(z.real), float(z.imag)]  # noqa: E731
        return {
            "stabilizable": self.stabilizable,
            "failing_eigenvalues": [c(z) for z in self.failing_eigenvalues],
            "tested_eigenvalues": [c(z) for z in self.tested],
        }


def hautus_test(A, B, margin: float = CRHP_MARGIN) -> HautusResult:
    """PBH rank test of ``[A - lam I | B]`` at every eigenvalue with ``Re lam >= margin``."""
    A = _square(A)
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    tested, failing = [], []
    for lam in eigenvalues(A):
        if lam.real < margin:
            continue
        if any(abs(lam - t) < 1e-12 for t in tested):
            continue
        tested.append(lam)
        M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if rank(M) < n:
            failing.append(lam)
    return HautusResult(not failing, failing, tested)


@dataclass
class LyapunovSolution:
    P: np.ndarray
    residual: float
    min_eigenvalue: float


def solve_lyapunov_eq(A, Q=None) -> LyapunovSolution:
    """Solve ``A^T P + P A = -Q`` by LU on the Kronecker-sum system.

    With row-major vectorization ``vec(A^T P) = (A^T kron I) vec(P)`` and
    ``vec(P A) = (I kron A^T) vec(P)``.
    """
    A = _square(A)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else _square(Q, "Q")
    if Q.shape != A.shape:
        raise ValueError("A and Q must have the same shape")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise ValueError("Q must be positive definite")
    lam = eigenvalues(A)
    bad = lam[lam.real >= 0]
    if bad.size:
        raise PreconditionError(f"A is not Hurwitz; eigenvalues with Re >= 0: {bad.tolist()}")
    I = np.eye(n)
    M = np.kron(A.T, I) + np.kron(I, A.T)
    try:
        lu = lu_factor(M, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"Kronecker system singular: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise ConvergenceError("Kronecker system singular")
    P = lu_solve(lu, -Q.reshape(-1)).reshape(n, n)
    P = 0.5 * (P + P.T)
    res = float(np.linalg.norm(A.T @ P + P @ A + Q))
    if res > 1e-8 * np.linalg.norm(Q):
        raise ConvergenceError("Lyapunov residual above tolerance", residual=res)
    mev = float(np.linalg.eigvalsh(P)[0])
    if mev <= 0:
        raise ConvergenceError(f"solution is not positive definite (min eigenvalue {mev})")
    return LyapunovSolution(P, res, mev)


def hurwitz_blend(A1, A2, s: float):
    """``s A1 + (1 - s) A2`` and its spectral abscissa."""
    A1, A2 = _square(A1, "A1"), _square(A2, "A2")
    if A1.shape != A2.shape:
        raise ValueError("A1 and A2 must have the same shape")
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    M = s * A1 + (1.0 - s) * A2
    return M, spectral_abscissa(M)
