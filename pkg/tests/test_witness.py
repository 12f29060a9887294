import math

import pytest

from wazewski.core import EquilibriumSpec, FieldSpec, GammaCurve, RegionSpec, gamma_eval
from wazewski.integrate import IntegratorConfig, Survived
from wazewski.models import build_model
from wazewski.witness import (
    BracketError,
    ConvergesTo,
    ExitsThrough,
    Label,
    OmegaCriteria,
    OmegaError,
    ball_samples,
    bisect_gamma,
    family_sweep,
    omega_classify,
    verify_uniform_stability,
)


def test_strip_endpoints():
    b = build_model("strip")
    lab = omega_classify(b.field, b.region, b.default_gamma, 0.0, b.default_criteria)
    assert lab.label is Label.A and lab.outcome.sigma == 0.0
    lab = omega_classify(b.field, b.region, b.default_gamma, 1.0, b.default_criteria)
    assert lab.label is Label.B


def test_unlisted_face_is_unresolved():
    b = build_model("strip")
    crit = OmegaCriteria(ExitsThrough(["y_bottom"]), ExitsThrough([]), 30.0)
    lab = omega_classify(b.field, b.region, b.default_gamma, 1.0, crit)
    assert lab.label is Label.UNRESOLVED and lab.outcome.face == "y_top"


def test_criteria_validation():
    with pytest.raises(ValueError):
        OmegaCriteria(ExitsThrough(["a"]), ExitsThrough(["a"]), 1.0)
    with pytest.raises(ValueError):
        OmegaCriteria(ExitsThrough(["a"]), ExitsThrough(["b"]), 0.0)


def test_bracket_error_on_ingress_start():
    b = build_model("strip", {"a": 1.0})
    with pytest.raises(BracketError) as info:
        bisect_gamma(b.field, b.region, b.default_gamma, b.default_criteria)
    assert info.value.endpoint == "0" and info.value.label is Label.UNRESOLVED


def test_omega_error_wraps_integration_failure():
    f = FieldSpec.from_strings(["-1", "sqrt(x1)"])
    region = RegionSpec.from_strings(2, {"big": "10 - x2"})
    crit = OmegaCriteria(ExitsThrough(["big"]), ExitsThrough([]), 3.0)
    with pytest.raises(OmegaError) as info:
        omega_classify(f, region, GammaCurve.segment((0.5, 0.0), (0.5, 1.0)), 0.0, crit)
    assert info.value.s == 0.0


def test_unresolved_midpoint_stops_early():
    # x' = x on (-1, 1): 0 is a fixed point and the exact bisection midpoint
    f = FieldSpec.from_strings(["x1"])
    region = RegionSpec.from_strings(1, {"lo": "x1 + 1", "hi": "1 - x1"})
    crit = OmegaCriteria(ExitsThrough(["lo"]), ExitsThrough(["hi"]), 10.0)
    res = bisect_gamma(f, region, GammaCurve.segment((-0.5,), (0.5,)), crit)
    assert res.terminated_early and res.iterations == 1
    assert res.start.state == (0.0,)
    assert isinstance(res.witness_outcome, Survived)


def test_twocircle_localizes_stable_manifold():
    b = build_model("twocircle")
    res = bisect_gamma(b.field, b.region, b.default_gamma, b.default_criteria)
    lo, hi = res.bracket
    # exact halving: the width is a power of two
    assert hi - lo == 2.0 ** -res.iterations
    assert abs(res.start.state[1] - 1.0) <= 1e-6
    assert isinstance(res.witness_outcome, Survived)
    _, xs = res.witness.sample()
    assert all(0.25 < x * x + y * y < 25 for x, y in xs)
    assert math.dist(xs[-1], (0.0, 1.0)) <= 1e-3
    assert res.max_jump <= 1e-6


def test_dcos_witness_and_min_distance():
    b = build_model("dcos")
    res = bisect_gamma(b.field, b.region, b.default_gamma, b.default_criteria)
    assert res.start.state[0] == pytest.approx(math.pi / 2, abs=1e-6)
    assert res.min_distance_to_eq >= 0.01


def test_strip_family_all_survive():
    b = build_model("strip")
    curves = [GammaCurve.segment((x, 0.0), (x, math.pi)) for x in (0.0, 1.0, 2.0)]
    results, rejected = family_sweep(b.field, b.region, curves, b.default_criteria)
    assert not rejected
    assert [r.curve_index for r in results] == [0, 1, 2]
    for r in results:
        assert isinstance(r.witness_outcome, Survived)
        _, xs = r.witness.sample()
        assert min(min(y, math.pi - y) for _, y in xs) > 0


def test_family_sweep_reports_rejected_curves():
    b = build_model("strip", {"a": 1.0})
    results, rejected = family_sweep(b.field, b.region, [b.default_gamma], b.default_criteria)
    assert results == [] and rejected[0][0] == 0


def test_empty_family():
    b = build_model("strip")
    assert family_sweep(b.field, b.region, [], b.default_criteria) == ([], [])


@pytest.mark.parametrize("name", ["strip", "twocircle", "pendulum", "wheeled", "dcos", "furuta"])
def test_endpoint_labels_stable_under_tighter_tolerance(name):
    b = build_model(name)
    loose = IntegratorConfig()
    tight = IntegratorConfig(rel_tol=loose.rel_tol / 10)
    for s in (0.0, 1.0):
        a = omega_classify(b.field, b.region, b.default_gamma, s, b.default_criteria, loose)
        c = omega_classify(b.field, b.region, b.default_gamma, s, b.default_criteria, tight)
        assert a.label is c.label


def test_stability_radius_zero_is_trivial():
    b = build_model("pendulum", parts={"v": "0"})
    rep = verify_uniform_stability(b.field, b.equilibrium, 0.0, 0.1, n_samples=5, cfg=IntegratorConfig(horizon=5.0))
    assert rep.passed and rep.samples == 1


def test_stability_rejects_bad_radii():
    b = build_model("pendulum")
    with pytest.raises(ValueError):
        verify_uniform_stability(b.field, b.equilibrium, 0.2, 0.2)


def test_ball_samples_respect_mask():
    eq = EquilibriumSpec((0.0, 0.0, 5.0, 0.0), (True, True, False, True))
    pts = ball_samples(eq, 0.1, 50, seed=1)
    assert len(pts) == 50
    assert all(p[2] == 5.0 and p[0] ** 2 + p[1] ** 2 + p[3] ** 2 <= 0.01 + 1e-15 for p in pts)
    assert pts == ball_samples(eq, 0.1, 50, seed=1)


def test_converges_to_in_report():
    b = build_model("pendulum")
    d = b.default_criteria.to_dict()
    assert d["class_a"]["converge"]["eps_enter"] == 0.02
    assert isinstance(b.default_criteria.class_a, ConvergesTo)
    assert gamma_eval(b.default_gamma, 0.0).state == (math.pi / 2, 0.0)
