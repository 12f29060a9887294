import math

import pytest

from wazewski.core import ExtPoint, FieldSpec, RegionSpec
from wazewski.egress import (
    EgressPointNotFound,
    FaceSampler,
    Kind,
    classify_face,
    classify_point,
    egress_section_point,
    scan_boundary,
)
from wazewski.models import build_model


def kind_of(rhs, face, state, t=0.0):
    f = FieldSpec.from_strings(rhs)
    return classify_face(f, f.parse(face), ExtPoint(state, t))


@pytest.mark.parametrize(
    "rhs, face, state, kind, order",
    [
        (["-1"], "x1", (0.0,), Kind.STRICT_EGRESS, 1),
        (["1"], "x1", (0.0,), Kind.INGRESS, 1),
        # g = x2 under x' = 1, y' = x: g' = x = 0, g'' = 1
        (["1", "x1"], "x2", (0.0, 0.0), Kind.EGRESS_NOT_STRICT, 2),
        (["1", "-x1"], "x2", (0.0, 0.0), Kind.EXTERNALLY_TANGENT, 2),
        # y' = -x^2: g''' = -2
        (["1", "-x1^2"], "x2", (0.0, 0.0), Kind.STRICT_EGRESS, 3),
        (["1", "x1^2"], "x2", (0.0, 0.0), Kind.INGRESS, 3),
        (["0", "0"], "x2", (0.0, 0.0), Kind.UNDETERMINED, 4),
    ],
)
def test_decision_table(rhs, face, state, kind, order):
    k, ds, n = kind_of(rhs, face, state)
    assert k is kind
    assert n == order


def test_deriv_tol_skips_tiny_terms():
    k, ds, n = kind_of(["1", "-1e-12 + x1"], "x2", (0.0, 0.0))
    assert k is Kind.EGRESS_NOT_STRICT and n == 2
    assert ds[0] == pytest.approx(-1e-12)


def test_time_dependent_face():
    # g = x - t under x' = 0: g' = -1
    k, _, _ = kind_of(["0"], "x1 - t", (2.0,), t=2.0)
    assert k is Kind.STRICT_EGRESS


def test_classify_point_requires_boundary_and_reports_corner():
    f = FieldSpec.from_strings(["-1", "-1"])
    box = RegionSpec.from_strings(2, {"a": "x1", "b": "x2"})
    assert classify_point(f, box, ExtPoint((0.0, 0.0), 0.0)).kind is Kind.CORNER
    c = classify_point(f, box, ExtPoint((0.0, 1.0), 0.0))
    assert c.kind is Kind.STRICT_EGRESS and c.face == "a"
    with pytest.raises(ValueError):
        classify_point(f, box, ExtPoint((1.0, 1.0), 0.0))


def test_fig1_scan_has_one_violation():
    b = build_model("fig1")
    rep = scan_boundary(b.field, b.region, b.samplers)
    assert not rep.holds
    assert len(rep.violations) == 1
    v = rep.violations[0]
    assert v["face"] == "y_top" and v["kind"] == "egress_not_strict"
    assert v["state"] == [0.0, 3.0]
    assert rep.tallies["y_top"]["strict_egress"] == 30
    assert rep.tallies["y_top"]["ingress"] == 30
    assert rep.tallies["y_bottom"]["strict_egress"] == 30


def test_pendulum_strict_egress_set():
    b = build_model("pendulum")
    rep = scan_boundary(b.field, b.region, b.samplers)
    assert rep.holds and not rep.undetermined and not rep.corners
    for s in rep.samples:
        phi, phid = s["state"]
        strict = (s["face"] == "phi_low" and phid < 0) or (s["face"] == "phi_high" and phid > 0)
        assert (s["kind"] == "strict_egress") == strict
        if phid == 0.0:
            assert s["kind"] == "externally_tangent"


def test_sampler_without_root_is_skipped():
    b = build_model("strip")
    s = FaceSampler("y_bottom", "x2", (1.0, 2.0), grid={"x1": (0.0, 1.0, 3)})
    rep = scan_boundary(b.field, b.region, [s])
    assert rep.sampled == 0 and rep.skipped == 3


def test_halton_sampler_is_seeded():
    s = FaceSampler("y_bottom", "x2", (-1, 1), box={"x1": (-1.0, 1.0)}, count=8, seed=3)
    assert s.points() == s.points()
    assert len(s.points()) == 8


def test_egress_section_point_nudges_off_tangency():
    b = build_model("fig1")
    p = egress_section_point(b.region, b.field, "y_top", ExtPoint((0.0, 2.9), 0.0))
    assert p.state[1] == pytest.approx(3.0)
    # g = 3 - y has g' = x, so the strict side is x < 0
    assert p.state[0] == pytest.approx(-1e-3)
    assert classify_point(b.field, b.region, p).kind is Kind.STRICT_EGRESS


def test_egress_section_point_gives_up():
    f = FieldSpec.from_strings(["0", "1"])
    region = RegionSpec.from_strings(2, {"floor": "x2"})
    with pytest.raises(EgressPointNotFound):
        egress_section_point(region, f, "floor", ExtPoint((0.0, 0.5), 0.0), budget=3)


def test_dcos_faces_are_strict():
    b = build_model("dcos")
    for face, x in (("x_low", -math.pi), ("x_high", math.pi)):
        assert classify_point(b.field, b.region, ExtPoint((x,), 0.0)).kind is Kind.STRICT_EGRESS
