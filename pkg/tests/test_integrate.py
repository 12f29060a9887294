import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wazewski.core import EquilibriumSpec, FieldSpec, RegionSpec
from wazewski.integrate import (
    ConvergedToTarget,
    Convergence,
    DivergenceError,
    Exited,
    IntegrationFailure,
    IntegratorConfig,
    Survived,
    integrate_until_egress,
)
from wazewski.models import build_model

TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)


def test_unit_speed_crossing_time():
    f = FieldSpec.from_strings(["1"])
    region = RegionSpec.from_strings(1, {"right": "1 - x1"})
    traj, out = integrate_until_egress(f, region, [0.0])
    assert isinstance(out, Exited)
    assert out.face == "right"
    assert out.sigma == pytest.approx(1.0, abs=1e-12)
    assert traj.t_end == out.exit.time


def test_exit_time_of_exponential_growth():
    # x' = x from 1 leaves x < e^2 at t = 2
    f = FieldSpec.from_strings(["x1"])
    region = RegionSpec.from_strings(1, {"cap": "exp(2) - x1"})
    _, out = integrate_until_egress(f, region, [1.0], 0.0, TIGHT)
    assert out.sigma == pytest.approx(2.0, abs=1e-11)


def test_fig1_quadratic_exit():
    b = build_model("fig1")
    _, out = integrate_until_egress(b.field, b.region, [-1.0, 1.0], 0.0, TIGHT)
    assert out.face == "y_bottom"
    assert out.sigma == pytest.approx(1 + math.sqrt(3), abs=1e-11)


def test_start_outside_is_rejected():
    b = build_model("strip")
    with pytest.raises(ValueError):
        integrate_until_egress(b.field, b.region, [0.0, -1.0])


def test_boundary_start_strict_egress_exits_at_zero():
    b = build_model("strip")
    traj, out = integrate_until_egress(b.field, b.region, [0.0, 0.0])
    assert isinstance(out, Exited) and out.sigma == 0.0 and out.face == "y_bottom"
    assert len(traj) == 1


def test_boundary_start_ingress_is_integrated():
    b = build_model("strip", {"a": 1.0})
    _, out = integrate_until_egress(b.field, b.region, [0.0, 0.0], 0.0, IntegratorConfig(horizon=5.0))
    assert isinstance(out, Survived)


def test_fixed_point_survives():
    b = build_model("pendulum")
    traj, out = integrate_until_egress(b.field, b.region, [math.pi / 2, 0.0], 0.0, IntegratorConfig(horizon=20.0))
    assert isinstance(out, Survived) and out.horizon == 20.0
    assert traj.states[-1] == [math.pi / 2, 0.0]


def test_convergence_detected_and_verified():
    b = build_model("pendulum")
    conv = Convergence(b.equilibrium, 0.02, 0.1)
    _, out = integrate_until_egress(b.field, b.region, [1.4, 0.1], 0.0, IntegratorConfig(horizon=30.0), conv)
    assert isinstance(out, ConvergedToTarget)
    assert 0 < out.entry_time < 30.0
    assert out.verified_until == 30.0


def test_leaving_stay_ball_rearms_entry():
    # anisotropic damped oscillator: the norm swings between a and 2a, so the
    # state enters the 0.9 ball at an x-extreme and leaves the 1.2 ball at a y-extreme
    f = FieldSpec.from_strings(["x2", "-4*x1 - 0.1*x2"])
    region = RegionSpec.from_strings(2, {"disc": "100 - x1^2 - x2^2"})
    eq = EquilibriumSpec((0.0, 0.0))
    conv = Convergence(eq, 0.9, 1.2)
    traj, out = integrate_until_egress(f, region, [1.0, 0.0], 0.0, IntegratorConfig(horizon=60.0), conv)
    assert isinstance(out, ConvergedToTarget)
    assert out.entry_time > 5.0
    assert any("left the eps_stay ball" in n for n in traj.notes)


def test_grazing_is_flagged_not_exited():
    # x' = 1, y' = x from (-1, 0.5 + 1e-5) passes 1e-5 above y = 0 at t = 1
    f = FieldSpec.from_strings(["1", "x1"])
    region = RegionSpec.from_strings(2, {"floor": "x2"})
    traj, out = integrate_until_egress(f, region, [-1.0, 0.5 + 1e-5], 0.0,
                                       IntegratorConfig(horizon=1.5, grazing_window=1e-3, max_step=0.01))
    assert isinstance(out, Survived)
    assert traj.grazing and traj.grazing[0]["face"] == "floor"
    assert traj.grazing[0]["time"] == pytest.approx(1.0, abs=0.01)
    assert traj.grazing[0]["g"] <= 1e-3


def test_finite_time_blowup_raises():
    f = FieldSpec.from_strings(["x1^2"])
    region = RegionSpec.from_strings(1, {"never": "1 + x1^2"})
    with pytest.raises(IntegrationFailure):
        integrate_until_egress(f, region, [1.0], 0.0, IntegratorConfig(horizon=2.0, max_steps=20000))


def test_evaluation_failure_is_integration_failure():
    f = FieldSpec.from_strings(["-1", "sqrt(x1)"])
    region = RegionSpec.from_strings(2, {"big": "10 - x2"})
    with pytest.raises(IntegrationFailure) as info:
        integrate_until_egress(f, region, [0.5, 0.0], 0.0, IntegratorConfig(horizon=3.0))
    assert "sqrt" in str(info.value)
    assert not isinstance(info.value, DivergenceError)


def test_discontinuity_crossing_after_convergence_is_converged():
    b = build_model("dcos")
    conv = Convergence(b.equilibrium, 0.01, 0.1)
    _, out = integrate_until_egress(b.field, b.region, [1.0], 0.0, IntegratorConfig(horizon=10.0), conv)
    assert isinstance(out, ConvergedToTarget)
    assert "discontinuity" in out.note


def test_tighter_tolerance_agrees():
    b = build_model("strip")
    _, a = integrate_until_egress(b.field, b.region, [0.0, 1.0])
    _, c = integrate_until_egress(b.field, b.region, [0.0, 1.0], 0.0, TIGHT)
    assert a.face == c.face
    assert a.sigma == pytest.approx(c.sigma, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.05, 0.95))
def test_semigroup_on_strip(y0, frac):
    b = build_model("strip")
    traj, out = integrate_until_egress(b.field, b.region, [0.0, y0], 0.0, TIGHT)
    assert isinstance(out, Exited)
    tau = frac * out.sigma
    # the flow map to tau is the integrator run to exactly tau
    head, mid = integrate_until_egress(b.field, b.region, [0.0, y0], 0.0, TIGHT.with_horizon(tau))
    assert isinstance(mid, Survived)
    _, out2 = integrate_until_egress(b.field, b.region, head.states[-1], tau, TIGHT)
    assert out2.face == out.face
    assert tau + out2.sigma == pytest.approx(out.sigma, abs=10 * TIGHT.event_tol)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(horizon=-1.0)
    assert IntegratorConfig().with_horizon(3.0).horizon == 3.0
