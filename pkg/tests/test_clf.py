import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lyapscope import catalog
from lyapscope.clf import (
    feedback_magnitude_profile,
    lie_derivative,
    lie_pair,
    singularity_locus,
    small_control_profile,
    sontag_feedback,
    sontag_value,
    verify_clf,
)
from lyapscope.errors import PreconditionError
from lyapscope.exprcore import ScalarCertificate, SystemDef, parse_expression
from lyapscope.lyapcert import SamplePlan
from lyapscope.simkit import integrate

RADII = (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001)


def P(text, n=2):
    return parse_expression(text, (n, 0), {})


def scalar(drift, g="1"):
    return SystemDef(1, 1, [P(drift, 1)], [[P(g, 1)]])


HALF1 = ScalarCertificate(1, P("0.5*x1^2", 1))
HALF2 = ScalarCertificate(2, P("0.5*(x1^2+x2^2)"))


def test_lie_derivative_examples():
    assert lie_derivative(HALF2, [P("-x1"), P("-x2")], [1.0, 1.0]) == -2.0
    assert lie_derivative(HALF1, [P("x1^3", 1)], [2.0]) == 16.0
    assert lie_derivative(HALF2, [P("0"), P("0")], [0.4, -3.0]) == 0.0


def test_sontag_minus_x():
    law = sontag_feedback(scalar("-x1"), HALF1)
    assert law([1.0]) == pytest.approx(1 - np.sqrt(2), rel=1e-14)
    assert law([1.0]) == pytest.approx(-0.4142, abs=1e-4)


def test_sontag_zero_branch():
    assert sontag_value(np.array([-1.0]), np.array([0.0]))[0] == 0.0
    law = sontag_feedback(scalar("-x1", "x1^2"), HALF1)
    assert law([0.0]) == 0.0


def test_sontag_cubic_closed_form():
    s = catalog.get("cubic_scalar")
    law = sontag_feedback(s.system, s.certificate())
    x = np.linspace(-3, 3, 100)
    u = law(x[:, None])
    np.testing.assert_allclose(u, -x**3 - x * np.sqrt(x**4 + 1), rtol=1e-9, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_sontag_decrease_identity(a, b):
    if abs(b) <= 1e-12:
        return
    u = float(sontag_value(np.array([a]), np.array([b]))[0])
    r = np.hypot(a, b * b)
    assert abs(a + u * b + r) <= 1e-9 * max(1.0, r)


def test_sontag_rejects_non_clf():
    s = scalar("x1", "0")
    with pytest.raises(PreconditionError) as ei:
        sontag_feedback(s, HALF1)
    assert ei.value.witness is not None


def test_sontag_multi_input_rejected():
    s = SystemDef(2, 2, [P("x1"), P("x2")], [[P("1"), P("0")], [P("0"), P("1")]])
    with pytest.raises(PreconditionError):
        sontag_feedback(s, HALF2)


def test_closed_loop_reaches_origin():
    s = catalog.get("cubic_scalar")
    law = sontag_feedback(s.system, s.certificate())
    tr = integrate(law.closed_loop(), [2.0], 10.0, conv_eps=1e-3)
    assert tr.termination == "converged"
    assert abs(tr.final[0]) < 1e-3


def test_diagnose_flags_near_singular():
    law = sontag_feedback(scalar("-x1"), HALF1)
    d = law.diagnose(np.array([[1e-10], [1.0]]))
    assert bool(d["near_singular"][0]) and not bool(d["near_singular"][1])
    assert np.all(d["decrease"] < 0)


@pytest.mark.parametrize("cid", ["cubic_scalar", "double_integrator"])
def test_catalog_clf(cid):
    e = catalog.get(cid)
    assert verify_clf(e.system, e.certificate(), SamplePlan(total=2000)).verdict == e.expected["clf"]


def test_clf_fails_without_authority():
    rep = verify_clf(scalar("x1", "0"), HALF1, SamplePlan(total=500))
    assert rep.verdict == "fail"


def test_lie_pair_shapes():
    e = catalog.get("double_integrator")
    X = np.random.default_rng(0).normal(size=(7, 2))
    a, b = lie_pair(e.system, e.certificate(), X)
    assert a.shape == (7,) and b.shape == (7, 1)


# -- small control property --------------------------------------------------


def test_scp_drift_decreasing():
    prof = small_control_profile(scalar("-x1"), HALF1, RADII)
    assert np.all(prof.required == 0.0) and prof.holds


def test_scp_unstable_drift():
    prof = small_control_profile(scalar("x1"), HALF1, RADII, margin_frac=0.1)
    np.testing.assert_allclose(prof.required, np.array(RADII) * 1.1, rtol=1e-12)
    assert prof.holds


def test_scp_no_authority():
    prof = small_control_profile(scalar("x1^2", "0"), HALF1, RADII)
    assert np.all(np.isinf(prof.required)) and not prof.holds


def test_scp_constant_requirement():
    # L_fV = |x| and L_gV = x, so the required input stays at 1 + margin_frac
    prof = small_control_profile(scalar("sign(x1)", "1"), HALF1, RADII)
    np.testing.assert_allclose(prof.required, 1.1, rtol=1e-12)
    assert not prof.holds


def test_feedback_shrinks_with_scp():
    s = catalog.get("cubic_scalar")
    law = sontag_feedback(s.system, s.certificate())
    assert small_control_profile(s.system, s.certificate(), RADII).holds
    mags = feedback_magnitude_profile(law, RADII)
    assert np.all(np.diff(mags) < 0) and mags[-1] < 1e-2


def test_scp_rejects_bad_radii():
    with pytest.raises(ValueError):
        small_control_profile(scalar("x1"), HALF1, (0.1, 1.0))


# -- singularity locus --------------------------------------------------------


def _sorted(R):
    return R[np.lexsort((R[:, 1], R[:, 0]))]


def test_locus_unit_circle():
    res = singularity_locus(HALF2, [1.0, 0.0], 0.5)
    assert res.count == 2
    np.testing.assert_allclose(_sorted(res.roots), [[0.0, -1.0], [0.0, 1.0]], atol=1e-6)


def test_locus_radius_two():
    res = singularity_locus(HALF2, [0.0, 1.0], 2.0)
    np.testing.assert_allclose(_sorted(res.roots), [[-2.0, 0.0], [2.0, 0.0]], atol=1e-6)


def test_locus_ahmadi_diagonal():
    V = catalog.get("ahmadi").certificate()
    res = singularity_locus(V, ["1", "1"], 1.0)
    assert res.count >= 2
    assert res.residuals["inner"] < 1e-8 and res.residuals["level"] < 1e-8


def _catalog_2d_certs():
    return [(e.id, k) for e in catalog.entries() if e.system.n == 2 for k in e.certificates]


@pytest.mark.parametrize("cid, name", _catalog_2d_certs())
def test_locus_nonempty_everywhere(cid, name):
    V = catalog.get(cid).certificate(name)
    for g in ([1.0, 0.0], [0.0, 1.0], [2**-0.5, 2**-0.5]):
        for c in (0.1, 1.0, 10.0):
            res = singularity_locus(V, g, c)
            assert res.count >= 1
            assert res.residuals["inner"] <= 1e-8 and res.residuals["level"] <= 1e-8


def test_locus_contour_fallback():
    # levelsets of this V cross some rays several times
    V = ScalarCertificate(2, P("x1^2 + x2^2 + 0.8*sin(4*x1)*x1*x2"))
    res = singularity_locus(V, [1.0, 0.0], 4.0)
    assert res.method == "contour"
    assert res.count >= 1
    assert res.residuals["inner"] <= 1e-8


def test_locus_bad_level():
    with pytest.raises(ValueError):
        singularity_locus(HALF2, [1.0, 0.0], -1.0)
