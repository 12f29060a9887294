"""Catalog of ready-made systems: field, region, target, curve and criteria.

Every model is described by expression templates. Controllers and other
overridable sub-expressions (``parts``) are spliced into the right-hand
side as parenthesized text before parsing, so an override such as
``{"v": "0"}`` yields a plain field with no trace of the default feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .core import (
    EquilibriumSpec,
    ExtPoint,
    FieldSpec,
    GammaCurve,
    RegionSpec,
    SpecificationError,
)
from .egress import FaceSampler, Kind, classify_face
from .exprlang import evaluate, format_expr, lie_derivatives, parse_expression
from .witness import ConvergesTo, ExitsThrough, OmegaCriteria

__all__ = [
    "ModelBundle",
    "AnalyticCheck",
    "UnknownModelError",
    "CATALOG",
    "build_model",
    "run_analytic_checks",
    "closed_loop_eigenvalues",
]


class UnknownModelError(SpecificationError):
    pass


@dataclass(frozen=True)
class ModelBundle:
    name: str
    description: str
    field: FieldSpec
    region: RegionSpec
    equilibrium: EquilibriumSpec | None
    default_gamma: GammaCurve
    default_criteria: OmegaCriteria
    params: Mapping[str, float]
    parts: Mapping[str, str]
    samplers: tuple[FaceSampler, ...] = ()

    def part(self, name: str):
        """Parsed sub-expression (controller, inertia term, ...) in the field's namespace."""
        return self.field.parse(self.parts[name])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "parts": dict(self.parts),
            "faces": {f.name: f.source for f in self.region.faces},
            "rhs": [format_expr(e) for e in self.field.rhs],
        }


@dataclass(frozen=True)
class _Entry:
    description: str
    dim: int
    rhs: tuple[str, ...]
    faces: Mapping[str, str]
    params: Mapping[str, float]
    parts: Mapping[str, str]
    equilibrium: EquilibriumSpec | None
    gamma: tuple[tuple[float, ...], tuple[float, ...]]
    class_a: Callable[[EquilibriumSpec | None], object]
    class_b: tuple[str, ...]
    horizon: float
    samplers: tuple[FaceSampler, ...]


def _converge(eps_enter: float, eps_stay: float):
    return lambda eq: ConvergesTo(eq, eps_enter, eps_stay)


def _exits(*faces: str):
    return lambda eq: ExitsThrough(faces)


HALF_PI = math.pi / 2

# Furuta pendulum, state (phi, phi', psi, psi'). The mass-matrix system
#   M11 psi'' + M12 phi'' = u - c1
#   M12 psi'' + M22 phi'' = c2
# is solved by Cramer's rule inside the expressions.
_FURUTA_M12 = "m*l*L*cos(x1)"
_FURUTA_M22 = "m*l^2"
_FURUTA_C1 = "0.5*m*l^2*x2*sin(2*x1)*x4 + (-m*l*L*sin(x1) + 0.5*m*l^2*sin(2*x1)*x4)*x2"
_FURUTA_C2 = "0.5*m*l^2*sin(2*x1)*x4*x2 + m*g*l*sin(x1)"
_FURUTA_DET = f"(({{inertia}})*({_FURUTA_M22}) - ({_FURUTA_M12})^2)"
_FURUTA_PHI = f"(({{inertia}})*({_FURUTA_C2}) - ({_FURUTA_M12})*(({{u}}) - ({_FURUTA_C1}))) / {_FURUTA_DET}"
_FURUTA_PSI = f"(({_FURUTA_M22})*(({{u}}) - ({_FURUTA_C1})) - ({_FURUTA_M12})*({_FURUTA_C2})) / {_FURUTA_DET}"

_WHEELED_A11 = "((2*M + m)*r^2)"
_WHEELED_A12 = "(m*r*l)"
_WHEELED_A22 = "(m*l^2)"
_WHEELED_PHI = (
    f"(({_WHEELED_A11} + {_WHEELED_A12}*cos(x1))*({{u}}) - {_WHEELED_A12}^2*x2^2*sin(x1)*cos(x1)"
    f" + {_WHEELED_A11}*m*g*l*sin(x1)) / ({_WHEELED_A11}*{_WHEELED_A22} - {_WHEELED_A12}^2*cos(x1))"
)

CATALOG: dict[str, _Entry] = {
    "strip": _Entry(
        "x' = 1, y' = a cos y + x sin y on the strip 0 < y < pi",
        2,
        ("1", "a*cos(x2) + x1*sin(x2)"),
        {"y_bottom": "x2", "y_top": "pi - x2"},
        {"a": -1.0},
        {},
        None,
        ((0.0, 0.0), (0.0, math.pi)),
        _exits("y_bottom"),
        ("y_top",),
        30.0,
        (
            FaceSampler("y_bottom", "x2", (-0.5, 0.5), grid={"x1": (-3.0, 3.0, 61)}),
            FaceSampler("y_top", "x2", (math.pi - 0.5, math.pi + 0.5), grid={"x1": (-3.0, 3.0, 61)}),
        ),
    ),
    "twocircle": _Entry(
        "x' = -x - x^3, y' = -y + y^2 on the annulus r1 < x^2 + y^2 < r2",
        2,
        ("-x1 - x1^3", "-x2 + x2^2"),
        {"inner": "x1^2 + x2^2 - r1", "outer": "r2 - x1^2 - x2^2"},
        {"r1": 0.25, "r2": 25.0},
        {},
        None,
        ((1.5, 0.0), (1.5, 3.0)),
        _exits("inner"),
        ("outer",),
        50.0,
        (
            FaceSampler("inner", "x2", (0.0, 0.6), grid={"x1": (-0.49, 0.49, 41)}),
            FaceSampler("inner", "x2", (-0.6, 0.0), grid={"x1": (-0.49, 0.49, 41)}),
            FaceSampler("outer", "x2", (0.0, 5.5), grid={"x1": (-4.9, 4.9, 99)}),
            FaceSampler("outer", "x2", (-5.5, 0.0), grid={"x1": (-4.9, 4.9, 99)}),
        ),
    ),
    "pendulum": _Entry(
        "inverted pendulum phi'' = u sin phi - cos phi + v + f(t) sin phi, 0 < phi < pi",
        2,
        ("x2", "({u})*sin(x1) - cos(x1) + ({v}) + ({f})*sin(x1)"),
        {"phi_low": "x1", "phi_high": "pi - x1"},
        {"kp": 4.0, "kd": 2.0, "vmax": 0.9},
        {"u": "0", "v": "clamp(cos(x1) - kp*(x1 - pi/2) - kd*x2, -vmax, vmax)", "f": "0"},
        EquilibriumSpec((HALF_PI, 0.0)),
        ((HALF_PI, 0.0), (0.0, -1.0)),
        _converge(0.02, 0.1),
        ("phi_low", "phi_high"),
        50.0,
        (
            FaceSampler("phi_low", "x1", (-0.5, 0.5), grid={"x2": (-3.0, 3.0, 601)}, times=(0.0, 1.0, 2.0)),
            FaceSampler("phi_high", "x1", (math.pi - 0.5, math.pi + 0.5), grid={"x2": (-3.0, 3.0, 601)},
                        times=(0.0, 1.0, 2.0)),
        ),
    ),
    "furuta": _Entry(
        "Furuta pendulum (phi, phi', psi, psi') under linear feedback, -pi/2 < phi < pi/2",
        4,
        ("x2", _FURUTA_PHI, "x4", _FURUTA_PSI),
        {"phi_low": "x1 + pi/2", "phi_high": "pi/2 - x1"},
        {"I": 0.02, "m": 0.2, "M": 1.0, "l": 0.3, "L": 0.25, "g": 9.81, "k1": -6.0, "k2": -1.0, "k3": -0.1},
        {"u": "-(k1*x1 + k2*x2 + k3*x4)", "inertia": "I + m*(L + l^2*sin(x1)^2)"},
        EquilibriumSpec((0.0, 0.0, 0.0, 0.0), (True, True, False, True)),
        ((0.0, 0.0, 0.0, 0.0), (HALF_PI, 1.0, 0.0, 0.0)),
        _converge(0.02, 0.1),
        ("phi_low", "phi_high"),
        30.0,
        (
            FaceSampler("phi_low", "x1", (-HALF_PI - 0.5, -HALF_PI + 0.5),
                        grid={"x2": (-2.0, 2.0, 41), "x4": (-2.0, 2.0, 5)}),
            FaceSampler("phi_high", "x1", (HALF_PI - 0.5, HALF_PI + 0.5),
                        grid={"x2": (-2.0, 2.0, 41), "x4": (-2.0, 2.0, 5)}),
        ),
    ),
    "wheeled": _Entry(
        "wheeled inverted pendulum (phi, phi') with saturated PD torque, -pi/2 < phi < pi/2",
        2,
        ("x2", _WHEELED_PHI),
        {"phi_low": "x1 + pi/2", "phi_high": "pi/2 - x1"},
        {"m": 0.2, "M": 1.0, "l": 0.3, "r": 0.1, "g": 9.81, "kp": 1.0, "kd": 0.2, "umax": 0.9},
        {"u": "clamp(-kp*x1 - kd*x2, -umax*m*g*l, umax*m*g*l)"},
        EquilibriumSpec((0.0, 0.0)),
        ((0.0, 0.0), (HALF_PI, 1.0)),
        _converge(0.02, 0.1),
        ("phi_low", "phi_high"),
        30.0,
        (
            FaceSampler("phi_low", "x1", (-HALF_PI - 0.5, -HALF_PI + 0.5), grid={"x2": (-3.0, 3.0, 121)}),
            FaceSampler("phi_high", "x1", (HALF_PI - 0.5, HALF_PI + 0.5), grid={"x2": (-3.0, 3.0, 121)}),
        ),
    ),
    "dcos": _Entry(
        "x' = -cos x for x > 0, cos x for x < 0, 0 at x = 0, on -pi < x < pi",
        1,
        ("-sign(x1)*cos(x1)",),
        {"x_low": "x1 + pi", "x_high": "pi - x1"},
        {},
        {},
        EquilibriumSpec((0.0,)),
        ((0.0,), (math.pi - 0.01,)),
        _converge(0.01, 0.1),
        ("x_low", "x_high"),
        40.0,
        (
            FaceSampler("x_low", "x1", (-math.pi - 0.5, -math.pi + 0.5)),
            FaceSampler("x_high", "x1", (math.pi - 0.5, math.pi + 0.5)),
        ),
    ),
    "fig1": _Entry(
        "x' = 1, y' = -x on the band 0 < y < 3 (tangency at (0, 3))",
        2,
        ("1", "-x1"),
        {"y_bottom": "x2", "y_top": "3 - x2"},
        {},
        {},
        None,
        ((0.0, 0.0), (0.0, 3.0)),
        _exits("y_bottom"),
        ("y_top",),
        10.0,
        (
            FaceSampler("y_bottom", "x2", (-0.5, 0.5), grid={"x1": (-3.0, 3.0, 61)}),
            FaceSampler("y_top", "x2", (2.5, 3.5), grid={"x1": (-3.0, 3.0, 61)}),
        ),
    ),
}


def build_model(
    name: str,
    overrides: Mapping[str, float] | None = None,
    parts: Mapping[str, str] | None = None,
) -> ModelBundle:
    """Instantiate a catalog model with parameter and sub-expression overrides."""
    try:
        entry = CATALOG[name]
    except KeyError:
        raise UnknownModelError(f"unknown model {name!r}; known: {', '.join(CATALOG)}") from None
    params = dict(entry.params)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise SpecificationError(f"model {name!r} has no parameter {k!r}; declared: {sorted(params)}")
        params[k] = float(v)
    merged = dict(entry.parts)
    for k, v in (parts or {}).items():
        if k not in merged:
            raise SpecificationError(f"model {name!r} has no sub-expression {k!r}; declared: {sorted(merged)}")
        merged[k] = str(v)
    rhs = [r.format(**merged) for r in entry.rhs]
    fld = FieldSpec.from_strings(rhs, params)
    region = RegionSpec.from_strings(entry.dim, entry.faces, params)
    eq = entry.equilibrium
    criteria = OmegaCriteria(entry.class_a(eq), ExitsThrough(entry.class_b), entry.horizon)
    bundle = ModelBundle(
        name, entry.description, fld, region, eq, GammaCurve.segment(*entry.gamma),
        criteria, params, merged, entry.samplers,
    )
    if name == "furuta":
        _check_furuta_determinant(bundle)
    return bundle


def _env(bundle: ModelBundle, state, t: float = 0.0) -> dict[str, float]:
    env = dict(bundle.params)
    env.update(zip(bundle.field.variables, (float(v) for v in state)))
    env["t"] = t
    return env


def furuta_determinant(bundle: ModelBundle, phi: float) -> float:
    det = parse_expression(_FURUTA_DET.format(inertia=bundle.parts["inertia"]), bundle.field.declared)
    return evaluate(det, _env(bundle, (phi, 0.0, 0.0, 0.0)))


def _check_furuta_determinant(bundle: ModelBundle, n: int = 181) -> None:
    for phi in np.linspace(-HALF_PI, HALF_PI, n):
        det = furuta_determinant(bundle, float(phi))
        if not det > 0:
            raise SpecificationError(f"Furuta mass matrix is singular or indefinite at phi={phi:.6g} (det={det:.3g})")


@dataclass(frozen=True)
class AnalyticCheck:
    name: str
    value: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "passed": self.passed, "detail": self.detail}


def closed_loop_eigenvalues(bundle: ModelBundle, h: float = 1e-6) -> np.ndarray:
    """Eigenvalues of the central-difference Jacobian at the equilibrium, masked coordinates only."""
    eq = bundle.equilibrium
    if eq is None:
        raise ValueError(f"model {bundle.name!r} has no equilibrium")
    idx = eq.indices
    x0 = np.array(eq.x0)
    jac = np.empty((len(idx), len(idx)))
    for col, j in enumerate(idx):
        e = np.zeros_like(x0)
        e[j] = h
        fp = np.array(bundle.field(0.0, list(x0 + e)))
        fm = np.array(bundle.field(0.0, list(x0 - e)))
        jac[:, col] = ((fp - fm) / (2 * h))[list(idx)]
    return np.linalg.eigvals(jac)


def _eig_check(bundle: ModelBundle) -> AnalyticCheck:
    ev = closed_loop_eigenvalues(bundle)
    worst = float(max(ev.real))
    return AnalyticCheck("eigenvalues.max_real", worst, worst < 0,
                         "closed-loop Jacobian at the equilibrium; " + ", ".join(f"{z:.6g}" for z in ev))


def _derivs(bundle: ModelBundle, face: str, state, K: int = 2) -> list[float]:
    return lie_derivatives(bundle.field, bundle.region.face(face).g, ExtPoint(tuple(state), 0.0), K)


def _accel(bundle: ModelBundle, state) -> float:
    return evaluate(bundle.field.rhs[1], _env(bundle, state))


def _part_value(bundle: ModelBundle, name: str, state) -> float:
    return evaluate(bundle.part(name), _env(bundle, state))


def _pendulum_checks(b: ModelBundle) -> list[AnalyticCheck]:
    out = []
    d = _derivs(b, "phi_low", (0.0, -1.0))
    out.append(AnalyticCheck("phi_low.d1_falling", d[0], d[0] < 0, "g = phi at (0, -1)"))
    v0 = _part_value(b, "v", (0.0, 0.0))
    d = _derivs(b, "phi_low", (0.0, 0.0))
    out.append(AnalyticCheck("phi_low.d2_at_rest", d[1], d[0] == 0 and d[1] < 0 and abs(d[1] - (v0 - 1)) <= 1e-12,
                             f"expected v(0,0) - 1 = {v0 - 1!r}"))
    d = _derivs(b, "phi_high", (math.pi, 1.0))
    out.append(AnalyticCheck("phi_high.d1_falling", d[0], d[0] < 0, "g = pi - phi at (pi, 1)"))
    vpi = _part_value(b, "v", (math.pi, 0.0))
    d = _derivs(b, "phi_high", (math.pi, 0.0))
    expect = -(1 + vpi)
    out.append(AnalyticCheck("phi_high.d2_at_rest", d[1], d[1] < 0 and abs(d[1] - expect) <= 1e-12,
                             f"expected -(1 + v(pi,0)) = {expect!r}"))
    out.append(AnalyticCheck("v_bound", max(abs(v0), abs(vpi)), abs(v0) < 1 and abs(vpi) < 1,
                             "|v(0,0)| < 1 and |v(pi,0)| < 1"))
    out.append(_eig_check(b))
    return out


def _furuta_checks(b: ModelBundle) -> list[AnalyticCheck]:
    out = []
    g_over_l = b.params["g"] / b.params["l"]
    for face, phi, sign in (("phi_high", HALF_PI, 1.0), ("phi_low", -HALF_PI, -1.0)):
        worst = 0.0
        for psid in (-2.0, -0.5, 0.0, 0.5, 2.0):
            worst = max(worst, abs(_accel(b, (phi, 0.0, 0.0, psid)) - sign * g_over_l))
        out.append(AnalyticCheck(f"{face}.accel_residual", worst, worst <= 1e-9,
                                 f"|phi'' - ({sign:+g})g/l| at phi = {phi:.6g}, phi' = 0 over psi' samples"))
    dets = [furuta_determinant(b, float(p)) for p in np.linspace(-HALF_PI, HALF_PI, 181)]
    out.append(AnalyticCheck("mass_matrix.min_det", min(dets), min(dets) > 0, "over a 181-point phi grid"))
    out.append(_eig_check(b))
    return out


def _wheeled_checks(b: ModelBundle) -> list[AnalyticCheck]:
    out = []
    p = b.params
    mgl = p["m"] * p["g"] * p["l"]
    a22 = p["m"] * p["l"] ** 2
    for face, phi, sign in (("phi_high", HALF_PI, 1.0), ("phi_low", -HALF_PI, -1.0)):
        u = _part_value(b, "u", (phi, 0.0))
        acc = _accel(b, (phi, 0.0))
        expect = (sign * mgl + u) / a22
        ok = abs(acc - expect) <= 1e-9 and sign * acc > 0 and abs(u) < mgl
        out.append(AnalyticCheck(f"{face}.accel", acc, ok, f"expected (({sign:+g})mgl + u)/a22 = {expect!r}, u = {u!r}"))
    out.append(_eig_check(b))
    return out


def _dcos_checks(b: ModelBundle) -> list[AnalyticCheck]:
    worst = max(abs(b.field(0.0, [x])[0] + b.field(0.0, [-x])[0]) for x in np.linspace(0, math.pi, 64))
    out = [AnalyticCheck("odd_symmetry", worst, worst == 0.0, "max |v(x) + v(-x)| on a grid")]
    out.append(AnalyticCheck("rest_at_zero", b.field(0.0, [0.0])[0], b.field(0.0, [0.0])[0] == 0.0, "v(0)"))
    for face, x in (("x_low", -math.pi), ("x_high", math.pi)):
        kind, ds, _ = classify_face(b.field, b.region.face(face).g, ExtPoint((x,), 0.0))
        out.append(AnalyticCheck(f"{face}.d1", ds[0], kind is Kind.STRICT_EGRESS, kind.value))
    return out


def _strip_checks(b: ModelBundle) -> list[AnalyticCheck]:
    a = b.params["a"]
    d0 = _derivs(b, "y_bottom", (0.0, 0.0), 1)[0]
    d1 = _derivs(b, "y_top", (0.0, math.pi), 1)[0]
    return [
        AnalyticCheck("y_bottom.d1", d0, abs(d0 - a) <= 1e-12, f"expected a = {a!r}"),
        AnalyticCheck("y_top.d1", d1, abs(d1 - a) <= 1e-12, f"expected a = {a!r}"),
    ]


def _twocircle_checks(b: ModelBundle) -> list[AnalyticCheck]:
    rho = math.sqrt(b.params["r1"])
    worst = -math.inf
    for th in np.linspace(0, 2 * math.pi, 73)[:-1]:
        d = _derivs(b, "inner", (rho * math.cos(th), rho * math.sin(th)), 1)[0]
        worst = max(worst, d)
    return [AnalyticCheck("inner.max_d1", worst, worst < 0, "inner circle is strict egress everywhere")]


def _fig1_checks(b: ModelBundle) -> list[AnalyticCheck]:
    d = _derivs(b, "y_top", (0.0, 3.0), 2)
    return [
        AnalyticCheck("y_top.d1_at_tangency", d[0], abs(d[0]) <= 1e-12, "expected 0"),
        AnalyticCheck("y_top.d2_at_tangency", d[1], abs(d[1] - 1) <= 1e-12, "expected 1 (egress, not strict)"),
    ]


_CHECKS = {
    "pendulum": _pendulum_checks,
    "furuta": _furuta_checks,
    "wheeled": _wheeled_checks,
    "dcos": _dcos_checks,
    "strip": _strip_checks,
    "twocircle": _twocircle_checks,
    "fig1": _fig1_checks,
}


def run_analytic_checks(bundle: ModelBundle) -> list[AnalyticCheck]:
    """Boundary sign identities and the eigenvalue oracle, evaluated without simulation."""
    return _CHECKS[bundle.name](bundle)
