import json

import numpy as np
import pytest

from lyapscope import catalog
from lyapscope.clf import small_control_profile, verify_clf
from lyapscope.errors import LyapscopeError
from lyapscope.exprcore import dump_document, load_document, parse_document
from lyapscope.homotopy import straight_line_path, verify_homotopy_stability
from lyapscope.linstab import hautus_test, hurwitz_blend
from lyapscope.lyapcert import SamplePlan, verify_convexity, verify_gconvex, verify_lyapunov
from lyapscope.obstruct import clf_obstruction_scan, nonholonomic_check, ray_alignment_search
from lyapscope.simkit import empirical_gas

PLAN = SamplePlan(total=2000)
EXPECTED_IDS = {
    "ahmadi", "canonical", "cubic_scalar", "double_integrator", "driftless_bilinear",
    "gauss_spiral_f1", "gauss_spiral_f1_beta100", "gauss_spiral_f2", "gauss_spiral_f2_beta100",
    "gconvex_demo", "hurwitz_pair", "linear_spiral", "rotation",
}


def _observe(e, check):
    s = e.system
    V = e.certificate() if e.certificates else None
    if check == "lyapunov":
        return verify_lyapunov(V, s, PLAN).verdict
    if check == "convex":
        return verify_convexity(V, PLAN).verdict
    if check == "gconvex":
        return verify_gconvex(V, e.diffeo(), PLAN).verdict
    if check == "obstruction":
        return ray_alignment_search(s).verdict
    if check == "clf":
        return verify_clf(s, V, PLAN).verdict
    if check == "clf_obstruction":
        return clf_obstruction_scan(s).verdict
    if check == "nonholonomic":
        return nonholonomic_check(s).verdict
    if check == "scp":
        return "pass" if small_control_profile(s, V).holds else "fail"
    if check == "hautus":
        ok = hautus_test(e.matrix("A"), e.matrix("B")).stabilizable
        return "stabilizable" if ok else "not-stabilizable"
    if check == "homotopy":
        return verify_homotopy_stability(straight_line_path(s, V), PLAN).verdict
    if check == "gas":
        return empirical_gas(s, t_final=300).verdict
    if check == "blend_half_abscissa":
        return round(hurwitz_blend(e.matrix("A1"), e.matrix("A2"), 0.5)[1], 9)
    raise AssertionError(f"no observer for {check}")


def test_ids_exact():
    assert set(catalog.list_ids()) == EXPECTED_IDS


def test_unknown_id():
    with pytest.raises(LyapscopeError):
        catalog.get("nope")


@pytest.mark.parametrize(
    "cid, check", [(e.id, k) for e in catalog.entries() for k in e.expected]
)
def test_expected_verdicts(cid, check):
    e = catalog.get(cid)
    assert _observe(e, check) == e.expected[check]


@pytest.mark.parametrize("cid", sorted(EXPECTED_IDS))
def test_round_trip_through_file(cid, tmp_path):
    e = catalog.get(cid)
    path = tmp_path / f"{cid}.json"
    dump_document(e.document, path)
    again = load_document(path)
    assert again.system.drift == e.system.drift
    assert again.system.inputs == e.system.inputs
    assert {k: v.body for k, v in again.certificates.items()} == {k: v.body for k, v in e.certificates.items()}
    X = np.random.default_rng(0).uniform(-2, 2, size=(20, e.system.n))
    np.testing.assert_array_equal(again.system.drift_values(X), e.system.drift_values(X))


def test_raw_is_plain_json():
    doc = catalog.raw("canonical")
    json.dumps(doc)
    assert parse_document(doc).system.n == 2


def test_canonical_claims():
    e = catalog.get("canonical")
    assert e.certificate().claims == {"lyapunov": "pass", "convex": "pass"}


def test_ahmadi_claims():
    e = catalog.get("ahmadi")
    assert e.expected["lyapunov"] == "pass"
    assert e.expected["convex"] == "fail"
    assert e.expected["obstruction"] == "clear"


def test_gauss_spiral_parameters():
    f1 = catalog.get("gauss_spiral_f1").system.params
    f2 = catalog.get("gauss_spiral_f2").system.params
    assert f1 == {"alpha": -0.2, "beta": 0.01, "gamma": 10.0, "p1": 0.3, "p2": 0.3}
    assert f2 == {"alpha": -0.1, "beta": 0.01, "gamma": 10.0, "p1": 0.5, "p2": 0.5}
    assert catalog.get("gauss_spiral_f2_beta100").system.params == dict(f2, beta=100.0)
    for cid in ("gauss_spiral_f2", "gauss_spiral_f2_beta100"):
        assert catalog.get(cid).provenance


def test_origin_is_equilibrium():
    for e in catalog.entries():
        np.testing.assert_allclose(e.system.drift_values(np.zeros(e.system.n)), 0.0, atol=1e-12)
