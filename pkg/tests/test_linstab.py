import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lyapscope import catalog
from lyapscope.errors import PreconditionError
from lyapscope.exprcore import linear_system, quadratic_certificate
from lyapscope.linstab import (
    eigenvalues,
    hautus_test,
    hurwitz_blend,
    parse_matrix,
    rank,
    solve_lyapunov_eq,
    spectral_abscissa,
)
from lyapscope.lyapcert import SamplePlan, verify_convexity, verify_lyapunov
from lyapscope.obstruct import clf_obstruction_scan

A1 = np.array([[-1.0, 10.0], [0.0, -1.0]])
A2 = np.array([[-1.0, 0.0], [10.0, -1.0]])
SPIRAL = np.array([[-0.1, 1.0], [-1.0, -0.1]])


def _sorted(z):
    z = np.asarray(z)
    return z[np.lexsort((z.imag, z.real))]


def test_parse_matrix_forms():
    np.testing.assert_array_equal(parse_matrix("0,1;0,0"), [[0, 1], [0, 0]])
    np.testing.assert_array_equal(parse_matrix("[[1, 2], [3, 4]]"), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(parse_matrix("0;1"), [[0], [1]])


def test_eigenvalue_examples():
    np.testing.assert_allclose(_sorted(eigenvalues(np.diag([1.0, -1.0]))), [-1, 1])
    np.testing.assert_allclose(_sorted(eigenvalues(SPIRAL)), [-0.1 - 1j, -0.1 + 1j], atol=1e-14)
    np.testing.assert_allclose(_sorted(eigenvalues([[-1.0, 5.0], [5.0, -1.0]])), [-6, 4], atol=1e-14)


def test_eigenvalue_trace_and_determinant():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        A = rng.normal(size=(5, 5))
        lam = eigenvalues(A, check_residual=True)
        assert len(lam) == 5
        assert abs(lam.sum() - np.trace(A)) <= 1e-9 * np.linalg.norm(A)
        det = np.linalg.det(A)
        assert abs(np.prod(lam) - det) <= 1e-9 * max(1.0, abs(det))


def test_dimension_cap():
    with pytest.raises(ValueError):
        eigenvalues(np.eye(33))
    with pytest.raises(ValueError):
        eigenvalues(np.ones((2, 3)))


def test_rank():
    assert rank([[1.0, 2.0], [2.0, 4.0]]) == 1
    assert rank(np.zeros((3, 3))) == 0


def test_hautus_examples():
    ok, failing = hautus_test([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
    assert ok and failing == []
    ok, failing = hautus_test(np.diag([1.0, -1.0]), [[0.0], [1.0]])
    assert not ok
    assert len(failing) == 1 and failing[0] == pytest.approx(1.0)
    res = hautus_test(-np.eye(3), np.zeros((3, 1)))
    assert res.stabilizable and res.tested == []


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_hautus_controllable_pairs(n, seed):
    # companion form with B = e_n is controllable by construction
    rng = np.random.default_rng(seed)
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1] = rng.normal(size=n) * 3
    T = rng.normal(size=(n, n)) + n * np.eye(n)
    Ti = np.linalg.inv(T)
    B = np.zeros((n, 1))
    B[-1] = 1.0
    assert hautus_test(T @ A @ Ti, T @ B).stabilizable


@pytest.mark.parametrize(
    "A, B",
    [
        ([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]]),
        ([[1.0, 0.0], [0.0, 2.0]], [[1.0], [1.0]]),
        ([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]]),
    ],
)
def test_hautus_pass_implies_clf_scan_clear(A, B):
    assert hautus_test(A, B).stabilizable
    assert clf_obstruction_scan(linear_system(A, B), SamplePlan(total=1000)).verdict == "clear"


def test_lyapunov_examples():
    np.testing.assert_allclose(solve_lyapunov_eq(-np.eye(2)).P, 0.5 * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(solve_lyapunov_eq(np.diag([-1.0, -2.0])).P, np.diag([0.5, 0.25]), atol=1e-14)
    sol = solve_lyapunov_eq(SPIRAL)
    np.testing.assert_allclose(sol.P, 5 * np.eye(2), atol=1e-9)
    assert sol.min_eigenvalue > 0


def test_lyapunov_rejects_unstable():
    with pytest.raises(PreconditionError):
        solve_lyapunov_eq(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        solve_lyapunov_eq(-np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_lyapunov_residual_property(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    A = M - (np.max(np.linalg.eigvals(M).real) + 0.5) * np.eye(n)
    L = rng.normal(size=(n, n))
    Q = L @ L.T + np.eye(n)
    sol = solve_lyapunov_eq(A, Q)
    assert np.linalg.norm(A.T @ sol.P + sol.P @ A + Q) <= 1e-8 * np.linalg.norm(Q)
    assert np.allclose(sol.P, sol.P.T)


@pytest.mark.parametrize("A", [SPIRAL, -np.eye(2), A1, A2, np.diag([-1.0, -2.0])], ids=["spiral", "minus_id", "A1", "A2", "diag"])
def test_lyapunov_solution_certifies(A):
    plan = SamplePlan(total=2000)
    V = quadratic_certificate(2 * solve_lyapunov_eq(A).P)
    s = linear_system(A)
    assert verify_lyapunov(V, s, plan).passed
    assert verify_convexity(V, plan).passed


def test_hurwitz_blend_remark():
    M, a = hurwitz_blend(A1, A2, 0.5)
    np.testing.assert_array_equal(M, [[-1.0, 5.0], [5.0, -1.0]])
    assert abs(a - 4.0) <= 1e-9
    assert hurwitz_blend(A1, A2, 0.0)[1] == pytest.approx(-1.0, abs=1e-7)
    assert hurwitz_blend(A1, A2, 1.0)[1] == pytest.approx(-1.0, abs=1e-7)


def test_hurwitz_pair_catalog():
    e = catalog.get("hurwitz_pair")
    _, a = hurwitz_blend(e.matrix("A1"), e.matrix("A2"), 0.5)
    assert a == pytest.approx(e.expected["blend_half_abscissa"], abs=1e-9)


def test_spectral_abscissa():
    assert spectral_abscissa(SPIRAL) == pytest.approx(-0.1, abs=1e-14)
