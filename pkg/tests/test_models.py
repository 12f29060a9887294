import math
import random

import numpy as np
import pytest

from wazewski.core import ExtPoint, SpecificationError
from wazewski.egress import Kind, classify_point
from wazewski.exprlang import evaluate
from wazewski.models import (
    CATALOG,
    UnknownModelError,
    build_model,
    closed_loop_eigenvalues,
    furuta_determinant,
    run_analytic_checks,
)


@pytest.mark.parametrize("name", list(CATALOG))
def test_catalog_builds_and_checks_pass(name):
    b = build_model(name)
    checks = run_analytic_checks(b)
    assert checks
    failed = [c.name for c in checks if not c.passed]
    assert not failed


# twocircle and dcos curves end inside and reach the class B face by integration
@pytest.mark.parametrize("name", ["strip", "pendulum", "furuta", "wheeled"])
def test_default_gamma_ends_on_strict_egress(name):
    b = build_model(name)
    end = ExtPoint(b.default_gamma.data[-1], 0.0)
    assert classify_point(b.field, b.region, end).kind is Kind.STRICT_EGRESS


def test_fig1_gamma_ends_on_tangency():
    b = build_model("fig1")
    c = classify_point(b.field, b.region, ExtPoint((0.0, 3.0), 0.0))
    assert c.kind is Kind.EGRESS_NOT_STRICT


def test_unknown_names():
    with pytest.raises(UnknownModelError):
        build_model("nope")
    with pytest.raises(SpecificationError):
        build_model("strip", {"b": 1.0})
    with pytest.raises(SpecificationError):
        build_model("strip", parts={"u": "0"})


def test_param_override_changes_field():
    b = build_model("strip", {"a": 2.0})
    assert b.params["a"] == 2.0
    assert b.field(0.0, [0.0, 0.0]) == [1.0, 2.0]


def test_part_override_replaces_controller():
    b = build_model("pendulum", parts={"v": "0"})
    assert b.parts["v"] == "0"
    # pi/2 is no longer a rest point
    assert b.field(0.0, [math.pi / 2, 0.0])[1] == pytest.approx(0.0, abs=1e-15)
    ev = closed_loop_eigenvalues(b)
    assert max(ev.real) > 0
    assert max(closed_loop_eigenvalues(build_model("pendulum")).real) < 0


def test_furuta_face_acceleration_is_control_independent():
    rng = random.Random(7)
    for _ in range(10):
        gains = {"k1": rng.uniform(-20, 20), "k2": rng.uniform(-5, 5), "k3": rng.uniform(-2, 2)}
        b = build_model("furuta", gains)
        psid = rng.uniform(-3, 3)
        acc = b.field(0.0, [math.pi / 2, 0.0, 0.0, psid])[1]
        assert acc == pytest.approx(b.params["g"] / b.params["l"], abs=1e-9)


def test_furuta_singular_mass_matrix_is_rejected():
    with pytest.raises(SpecificationError):
        build_model("furuta", parts={"inertia": "0"})
    assert furuta_determinant(build_model("furuta"), 0.0) > 0


@pytest.mark.parametrize("u", [-1.0, 1.0])
def test_wheeled_saturated_acceleration(u):
    b = build_model("wheeled")
    p = b.params
    mgl = p["m"] * p["g"] * p["l"]
    forced = build_model("wheeled", parts={"u": repr(u * 0.9 * mgl)})
    acc = forced.field(0.0, [math.pi / 2, 0.0])[1]
    assert acc > 0
    assert acc == pytest.approx((mgl + u * 0.9 * mgl) / (p["m"] * p["l"] ** 2), abs=1e-9)


def test_dcos_is_odd():
    b = build_model("dcos")
    for x in np.linspace(0.1, 3.0, 7):
        assert b.field(0.0, [x])[0] == -b.field(0.0, [-x])[0]


def test_bundle_to_dict():
    d = build_model("pendulum").to_dict()
    assert d["name"] == "pendulum" and set(d["faces"]) == {"phi_low", "phi_high"}
    assert evaluate(build_model("pendulum").part("v"), {"x1": math.pi / 2, "x2": 0.0, "t": 0.0,
                                                        "kp": 4.0, "kd": 2.0, "vmax": 0.9}) == pytest.approx(0.0)
