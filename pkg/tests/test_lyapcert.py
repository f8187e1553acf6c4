import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lyapscope import catalog
from lyapscope.errors import PreconditionError
from lyapscope.exprcore import DiffeoDef, ScalarCertificate, SystemDef, parse_expression, quadratic_certificate
from lyapscope.lyapcert import (
    BoundaryArgmaxWarning,
    SamplePlan,
    SearchBox,
    check_diffeo,
    convexity_witness_value,
    fenchel_conjugate,
    fenchel_residual,
    lyapunov_witness_value,
    scale_invariance_check,
    verify_convexity,
    verify_gconvex,
    verify_lyapunov,
)

PLAN = SamplePlan(total=2000)


def P(text, n=2):
    return parse_expression(text, (n, 0), {})


def cert(text, n=2):
    return ScalarCertificate(n, P(text, n))


def system(drift, n=2):
    return SystemDef(n, 0, [P(t, n) for t in drift])


HALF = cert("0.5*(x1^2+x2^2)")
AHMADI_V = cert("log(1+x1^2)+x2^2")
AHMADI = system(["-x1 + x1*x2", "-x2"])
ROTATION = system(["x2", "-x1"])
CANONICAL = system(["-x1", "-x2"])


# -- sample plan ---------------------------------------------------------------


def test_plan_deterministic_and_in_annulus():
    a = SamplePlan(total=500, seed=5).points(3)
    b = SamplePlan(total=500, seed=5).points(3)
    assert np.array_equal(a, b)
    r = np.linalg.norm(a, axis=1)
    assert r.min() >= 1e-3 * (1 - 1e-12) and r.max() <= 10 * (1 + 1e-12)
    assert not np.array_equal(a, SamplePlan(total=500, seed=6).points(3))


def test_plan_rejects_bad_radii():
    with pytest.raises(ValueError):
        SamplePlan(r_min=0.0)
    with pytest.raises(ValueError):
        SamplePlan(r_min=2.0, r_max=1.0)


# -- Lyapunov ------------------------------------------------------------------


def test_canonical_pair_passes():
    rep = verify_lyapunov(HALF, CANONICAL, PLAN)
    assert rep.verdict == "pass"
    # worst decrease margin -|x|^2 sits on the inner shell
    assert rep.margin < 0
    assert np.linalg.norm(rep.witness[0]) == pytest.approx(1e-3, rel=1e-9)


def test_ahmadi_passes():
    rep = verify_lyapunov(AHMADI_V, AHMADI, SamplePlan(total=10000))
    assert rep.verdict == "pass"
    assert rep.samples_used >= 10000
    assert rep.conditions["decrease"] < 0


def test_rotation_fails_decrease_with_zero_margin():
    rep = verify_lyapunov(HALF, ROTATION, PLAN)
    assert rep.verdict == "fail"
    assert rep.context["condition"] == "decrease"
    assert rep.conditions["positivity"] < 0
    assert abs(lyapunov_witness_value(rep, HALF, ROTATION)) <= 1e-12


def test_indefinite_candidate_fails_positivity():
    V = cert("x1^2 - x2^2")
    rep = verify_lyapunov(V, CANONICAL, PLAN)
    assert rep.verdict == "fail"
    w = lyapunov_witness_value(rep, V, CANONICAL)
    assert w >= 0.5 * rep.margin


def test_domain_error_is_inconclusive():
    rep = verify_lyapunov(cert("log(x1^2)+x2^2"), CANONICAL, SamplePlan(total=200, axis=4))
    assert rep.verdict == "inconclusive"
    assert rep.exit_code == 2


def test_control_system_rejected():
    s = catalog.get("double_integrator").system
    with pytest.raises(PreconditionError):
        verify_lyapunov(catalog.get("double_integrator").certificate(), s, PLAN)


def test_fail_witness_reproduces_violation():
    V = cert("x1^2 + x2^2")
    s = system(["x1 - x2", "x1"])
    rep = verify_lyapunov(V, s, PLAN)
    assert rep.verdict == "fail"
    assert lyapunov_witness_value(rep, V, s) >= 0.5 * rep.margin


@pytest.mark.parametrize("lam", ["0.5", "x1^2+x2^2", "3"])
def test_damping_preserves_lyapunov(lam):
    # a convex certificate keeps working after subtracting lam(x) x
    V = catalog.get("linear_spiral").certificate()
    s = catalog.get("linear_spiral").system
    assert verify_convexity(V, PLAN).passed
    assert verify_lyapunov(V, s.damped(P(lam)), PLAN).passed


# -- convexity -----------------------------------------------------------------


def test_quadratic_convex():
    rep = verify_convexity(HALF, PLAN)
    assert rep.verdict == "pass"
    # midpoint gap of a quadratic is -|x-y|^2/8, tiny for the closest pair
    assert -1e-6 < rep.margin <= 0


def test_ahmadi_chord_example():
    rep = verify_convexity(AHMADI_V, pairs=[[[1.0, 0.0], [3.0, 0.0]]])
    assert rep.verdict == "fail"
    gap = math.log(5) - 0.5 * (math.log(2) + math.log(10))
    assert rep.conditions["midpoint"] == pytest.approx(gap, rel=1e-12)
    assert math.log(5) == pytest.approx(1.609, abs=1e-3)
    assert 0.5 * (math.log(2) + math.log(10)) == pytest.approx(1.498, abs=1e-3)


def test_ahmadi_chord_witness_on_axis():
    rep = verify_convexity(AHMADI_V, PLAN)
    assert rep.verdict == "fail"
    a, b = rep.witness
    assert a[1] == 0.0 and b[1] == 0.0
    assert convexity_witness_value(rep, AHMADI_V) >= 0.5 * rep.margin


def test_ahmadi_hessian_at_two():
    rep = verify_convexity(AHMADI_V, mode="hessian", points=[[2.0, 0.0]])
    assert rep.verdict == "fail"
    assert rep.context["min_eigenvalue"] == pytest.approx(-6 / 25, abs=1e-12)


@pytest.mark.parametrize(
    "cid, name", [(e.id, k) for e in catalog.entries() for k in e.certificates]
)
def test_chord_and_hessian_agree(cid, name):
    V = catalog.get(cid).certificate(name)
    chord = verify_convexity(V, PLAN, tol=1e-7)
    hess = verify_convexity(V, PLAN, mode="hessian", tol=1e-7)
    assert chord.verdict == hess.verdict


@pytest.mark.parametrize(
    "cid, name", [(e.id, k) for e in catalog.entries() for k in e.certificates]
)
def test_identity_gconvex_matches_convexity(cid, name):
    V = catalog.get(cid).certificate(name)
    ident = DiffeoDef.identity(V.n)
    assert verify_gconvex(V, ident, PLAN).verdict == verify_convexity(V, PLAN).verdict


def test_gconvex_rescues_ahmadi():
    phi = catalog.get("ahmadi").diffeo("quadrant_log")
    rep = verify_gconvex(AHMADI_V, phi, PLAN)
    assert rep.verdict == "pass"
    assert rep.context["roundtrip_error"] <= 1e-8


def test_identity_gconvex_fails_like_chord():
    rep = verify_gconvex(AHMADI_V, DiffeoDef.identity(2), PLAN)
    ref = verify_convexity(AHMADI_V, PLAN)
    assert rep.verdict == "fail"
    assert rep.margin == pytest.approx(ref.margin, rel=1e-12)


def test_bad_diffeo_rejected():
    bad = DiffeoDef(2, [P("2*x1"), P("x2")], [P("x1"), P("x2")], "bad")
    with pytest.raises(PreconditionError):
        check_diffeo(bad, np.array([[1.0, 1.0], [0.5, 0.0]]))


# -- Fenchel -------------------------------------------------------------------


def test_conjugate_of_half_norm():
    cv = fenchel_conjugate(HALF, [1.0, 2.0])
    assert cv.value == pytest.approx(2.5, abs=1e-9)
    np.testing.assert_allclose(cv.argmax, [1.0, 2.0], atol=1e-6)
    cv = fenchel_conjugate(HALF, [0.0, 0.0])
    assert cv.value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(cv.argmax, [0.0, 0.0], atol=1e-6)


def test_conjugate_of_quartic():
    cv = fenchel_conjugate(cert("0.25*x1^4", 1), [1.0])
    assert cv.value == pytest.approx(0.75, abs=1e-9)
    assert cv.argmax[0] == pytest.approx(1.0, abs=1e-5)


@pytest.mark.filterwarnings("ignore::lyapscope.lyapcert.BoundaryArgmaxWarning")
def test_conjugate_at_least_minus_v0():
    rng = np.random.default_rng(2)
    for y in rng.normal(size=(10, 2)):
        assert fenchel_conjugate(AHMADI_V, y).value >= -1e-12


def test_boundary_argmax_warns():
    with pytest.warns(BoundaryArgmaxWarning):
        cv = fenchel_conjugate(cert("0.5*x1^2", 1), [5.0], SearchBox(-2.0, 2.0))
    assert cv.on_boundary


def test_nonconvex_flagged():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cv = fenchel_conjugate(AHMADI_V, [0.1, 0.1], convex_verified=False)
    assert cv.convex_verified is False


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_fenchel_equality_random_quadratics(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(2, 2))
    Pm = L @ L.T + 0.5 * np.eye(2)
    V = quadratic_certificate(Pm)
    # gradients Px must stay inside the default search box
    X = rng.normal(size=(10, 2))
    X *= np.minimum(1.0, 4.0 / np.linalg.norm(X @ Pm, axis=1))[:, None]
    assert np.max(fenchel_residual(V, X)) <= 1e-6


# -- scaling -------------------------------------------------------------------


def test_scale_invariance():
    assert scale_invariance_check(HALF, CANONICAL, (0.1, 1.0, 3.0), PLAN).verdict == "pass"
    assert scale_invariance_check(AHMADI_V, AHMADI, (2.0,), PLAN).verdict == "pass"
    assert scale_invariance_check(HALF, ROTATION, (5.0,), PLAN).verdict == "fail"


def test_report_json_round_trip():
    import json

    rep = verify_convexity(AHMADI_V, PLAN)
    d = json.loads(rep.to_json())
    assert d["verdict"] == "fail" and d["check"] == "convex"
    assert {"margin", "witness", "tolerance", "samples", "seed"} <= set(d)
