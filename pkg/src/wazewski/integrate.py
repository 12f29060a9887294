"""Dormand-Prince 5(4) integration with dense output and face-crossing events.

Steps are accepted on the usual RMS error norm. After each accepted step
every face of the region is sampled on the step's 4th-order interpolant;
the first sign change is refined by bisection and ends the run. Touching a
face from inside without crossing is recorded as grazing and integration
continues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .core import (
    EquilibriumSpec,
    ExtPoint,
    FieldSpec,
    MembershipKind,
    RegionSpec,
    Trajectory,
    dense_eval,
    masked_distance,
    region_membership,
    state_names,
)
from .exprlang import DISCONTINUOUS, EvaluationError, Func, compile_function, walk

__all__ = [
    "IntegratorConfig",
    "Convergence",
    "Exited",
    "Survived",
    "ConvergedToTarget",
    "EgressOutcome",
    "IntegrationFailure",
    "DivergenceError",
    "integrate_until_egress",
]

# Dormand & Prince (1980) tableau, error weights and Hairer's dense output.
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
A71, A73, A74, A75, A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40
D1, D3, D4 = -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072
D5, D6, D7 = 701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423

SAFETY, FAC_MIN, FAC_MAX = 0.9, 0.2, 10.0
EVENT_ITERATIONS = 80


@dataclass(frozen=True)
class IntegratorConfig:
    horizon: float = 10.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: float = 1.0
    event_tol: float = 1e-12
    grazing_window: float = 1e-8
    dense_samples: int = 4
    max_steps: int = 500_000

    def __post_init__(self):
        for name in ("horizon", "rel_tol", "abs_tol", "max_step", "event_tol", "grazing_window"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.dense_samples < 1 or self.max_steps < 1:
            raise ValueError("dense_samples and max_steps must be >= 1")

    def with_horizon(self, horizon: float) -> "IntegratorConfig":
        return replace(self, horizon=horizon)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Convergence:
    """Entering the ``eps_enter`` ball and staying in the ``eps_stay`` ball."""

    eq: EquilibriumSpec
    eps_enter: float
    eps_stay: float

    def __post_init__(self):
        if not 0 < self.eps_enter <= self.eps_stay:
            raise ValueError("need 0 < eps_enter <= eps_stay")


@dataclass(frozen=True)
class Exited:
    sigma: float
    exit: ExtPoint
    face: str
    kind = "exited"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "exit_state": list(self.exit.state),
                "exit_time": self.exit.time, "face": self.face}


@dataclass(frozen=True)
class Survived:
    horizon: float
    kind = "survived"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "horizon": self.horizon}


@dataclass(frozen=True)
class ConvergedToTarget:
    entry_time: float
    verified_until: float
    note: str = ""
    kind = "converged"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "entry_time": self.entry_time, "verified_until": self.verified_until}
        if self.note:
            out["note"] = self.note
        return out


EgressOutcome = Union[Exited, Survived, ConvergedToTarget]


class IntegrationFailure(RuntimeError):
    def __init__(self, reason: str, time: float, state: Sequence[float]):
        super().__init__(f"{reason} at t={time!r}, state={list(state)!r}")
        self.reason = reason
        self.time = time
        self.state = list(state)


class DivergenceError(IntegrationFailure):
    """The state became non-finite; ``time`` is the escape time."""


def _guards(field: FieldSpec):
    """Compiled arguments of discontinuous primitives, or None."""
    args = [node.args[0] for e in field.rhs for node in walk(e)
            if isinstance(node, Func) and node.name in DISCONTINUOUS]
    if not args:
        return None
    return compile_function(args, field.variables, field.params)


def _sgn(v: float) -> int:
    return (v > 0) - (v < 0)


def _initial_step(f, t0, y0, f0, direction_span, cfg) -> float:
    sc = [cfg.abs_tol + cfg.rel_tol * abs(v) for v in y0]
    n = len(y0)
    d0 = math.sqrt(sum((v / s) ** 2 for v, s in zip(y0, sc)) / n)
    d1 = math.sqrt(sum((v / s) ** 2 for v, s in zip(f0, sc)) / n)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = [a + h0 * b for a, b in zip(y0, f0)]
    f1 = f(t0 + h0, y1)
    d2 = math.sqrt(sum(((a - b) / s) ** 2 for a, b, s in zip(f1, f0, sc)) / n) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, cfg.max_step, direction_span)


def _boundary_exit(field: FieldSpec, region: RegionSpec, p: ExtPoint, active) -> str | None:
    from .egress import LEAVING, classify_face

    for name in active:
        kind, _, _ = classify_face(field, region.face(name).g, p)
        if kind in LEAVING:
            return name
    return None


def integrate_until_egress(
    field: FieldSpec,
    region: RegionSpec,
    x0: Sequence[float],
    t0: float = 0.0,
    cfg: IntegratorConfig = IntegratorConfig(),
    convergence: Convergence | None = None,
) -> tuple[Trajectory, EgressOutcome]:
    """Integrate from ``(x0, t0)`` until the first exit from the region.

    A start on the boundary whose Lie chain says it leaves immediately exits
    with ``sigma = 0``; other boundary starts (ingress, internal tangency)
    are integrated normally. With ``convergence`` the run reports
    ``ConvergedToTarget`` once the target ball is entered and the state then
    stays within ``eps_stay`` up to the horizon; leaving that ball re-arms
    the entry test and the run carries on.
    """
    p0 = ExtPoint(x0, t0)
    if p0.dim != field.dim or region.dim != field.dim:
        raise ValueError("dimension mismatch between start, field and region")
    traj = Trajectory([p0.time], [list(p0.state)])
    mem = region_membership(p0, region)
    if mem.kind is MembershipKind.OUTSIDE:
        raise ValueError(f"start {p0.state} at t={t0} lies outside the region")
    if mem.kind is MembershipKind.ON_BOUNDARY:
        face = _boundary_exit(field, region, p0, mem.active)
        if face is not None:
            return traj, Exited(0.0, p0, face)

    f = field.compiled
    gfun = region.compiled
    face_names = region.face_names
    guards = _guards(field)
    t = p0.time
    y = list(p0.state)
    n = len(y)
    t_end = t + cfg.horizon
    rtol, atol = cfg.rel_tol, cfg.abs_tol
    samples = cfg.dense_samples

    def rhs(tt, yy):
        try:
            out = f(tt, yy)
        except (ArithmeticError, ValueError) as exc:
            try:
                field.evaluate(yy, tt)
            except EvaluationError as detail:
                exc = detail
            raise IntegrationFailure(f"field evaluation failed ({exc})", tt, yy) from None
        return out

    # convergence bookkeeping
    phase_verify = False
    entry_time = None
    if convergence is not None and masked_distance(y, convergence.eq) <= convergence.eps_enter:
        phase_verify, entry_time = True, t

    def converged_result(t_stop: float, note: str = "") -> tuple[Trajectory, EgressOutcome]:
        return traj, ConvergedToTarget(entry_time, t_stop, note)

    k1 = rhs(t, y)
    g_prev = gfun(t, y)
    guard_prev = guards(t, y) if guards else None
    # last two face samples for grazing detection
    g_hist = [g_prev, g_prev]
    prev_ts = t
    h = _initial_step(rhs, t, y, k1, t_end - t, cfg)
    steps = 0
    rejected_last = False

    while t < t_end:
        steps += 1
        if steps > cfg.max_steps:
            failure = IntegrationFailure("step budget exhausted", t, y)
            if phase_verify and masked_distance(y, convergence.eq) <= convergence.eps_stay:
                return converged_result(t, f"verification stopped: {failure.reason}")
            raise failure
        h = min(h, cfg.max_step, t_end - t)
        if h <= 16 * math.ulp(max(1.0, abs(t))):
            failure = IntegrationFailure("step size underflow", t, y)
            if phase_verify and masked_distance(y, convergence.eq) <= convergence.eps_stay:
                return converged_result(t, f"verification stopped: {failure.reason}")
            raise failure

        k2 = rhs(t + C2 * h, [y[i] + h * A21 * k1[i] for i in range(n)])
        k3 = rhs(t + C3 * h, [y[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(n)])
        k4 = rhs(t + C4 * h, [y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(n)])
        k5 = rhs(t + C5 * h, [y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
                              for i in range(n)])
        k6 = rhs(t + h, [y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
                         for i in range(n)])
        y_new = [y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i])
                 for i in range(n)]
        if not all(math.isfinite(v) for v in y_new):
            if h <= 1e-12 * max(1.0, abs(t)):
                raise DivergenceError("state became non-finite", t, y)
            h *= 0.25
            rejected_last = True
            continue
        t_new = t + h
        if t_end - t_new <= 4 * math.ulp(t_end):
            t_new = t_end
        k7 = rhs(t_new, y_new)
        err = 0.0
        for i in range(n):
            e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            err += (e / sc) ** 2
        err = math.sqrt(err / n)
        if not math.isfinite(err):
            h *= 0.25
            rejected_last = True
            continue
        if err > 1.0:
            h *= max(FAC_MIN, SAFETY * err ** -0.2)
            rejected_last = True
            continue

        # accepted
        if guards is not None:
            guard_new = guards(t_new, y_new)
            for a, b in zip(guard_prev, guard_new):
                if a != 0 and _sgn(a) != _sgn(b):
                    failure = IntegrationFailure("discontinuity surface crossed", t, y)
                    if phase_verify and masked_distance(y, convergence.eq) <= convergence.eps_stay:
                        return converged_result(t, f"verification stopped: {failure.reason}")
                    raise failure
            guard_prev = guard_new
        ydiff = [b - a for a, b in zip(y, y_new)]
        bspl = [h * k1[i] - ydiff[i] for i in range(n)]
        coeffs = (
            h,
            list(y),
            ydiff,
            bspl,
            [ydiff[i] - h * k7[i] - bspl[i] for i in range(n)],
            [h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
             for i in range(n)],
        )

        theta_prev = 0.0
        for j in range(1, samples + 1):
            if j < samples:
                theta = j / samples * (t_new - t) / h
                ts = t + theta * h
                xs = dense_eval(coeffs, theta)
            else:
                theta = (t_new - t) / h
                ts, xs = t_new, y_new
            gs = gfun(ts, xs)
            crossing = [i for i, v in enumerate(gs) if v < 0.0]
            if crossing:
                t_exit, x_exit, face = _refine_event(
                    gfun, coeffs, t, theta_prev, theta, crossing, g_prev, rhs, y, k1, cfg.event_tol
                )
                traj.times.append(t_exit)
                traj.states.append(x_exit)
                traj.dense.append(coeffs)
                sigma = t_exit - p0.time
                return traj, Exited(sigma, ExtPoint(x_exit, t_exit), face_names[face])
            for i, v in enumerate(gs):
                older, old = g_hist[0][i], g_hist[1][i]
                if old < older and old < v and 0.0 <= old <= cfg.grazing_window:
                    traj.grazing.append({"face": face_names[i], "time": prev_ts, "g": old})
            g_hist = [g_hist[1], gs]
            prev_ts = ts
            g_prev = gs
            theta_prev = theta
            if convergence is not None:
                dist = masked_distance(xs, convergence.eq)
                if not phase_verify and dist <= convergence.eps_enter:
                    phase_verify, entry_time = True, ts
                elif phase_verify and dist > convergence.eps_stay:
                    phase_verify = False
                    traj.notes.append(f"left the eps_stay ball at t={ts!r} after entering at t={entry_time!r}")
                    entry_time = None

        traj.times.append(t_new)
        traj.states.append(y_new)
        traj.dense.append(coeffs)
        t, y, k1 = t_new, y_new, k7

        fac = FAC_MAX if err == 0.0 else min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
        if rejected_last:
            fac = min(fac, 1.0)
        rejected_last = False
        h *= fac

    if phase_verify:
        return converged_result(t_end)
    return traj, Survived(cfg.horizon)


def _dp_step(rhs, t0: float, y0: list[float], k1: list[float], h: float) -> list[float]:
    """One Dormand-Prince 5th-order step of size ``h`` (no error control)."""
    n = len(y0)
    k2 = rhs(t0 + C2 * h, [y0[i] + h * A21 * k1[i] for i in range(n)])
    k3 = rhs(t0 + C3 * h, [y0[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(n)])
    k4 = rhs(t0 + C4 * h, [y0[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(n)])
    k5 = rhs(t0 + C5 * h, [y0[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]) for i in range(n)])
    k6 = rhs(t0 + h, [y0[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
                      for i in range(n)])
    return [y0[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]) for i in range(n)]


def _refine_event(gfun, coeffs, t0, theta_lo, theta_hi, crossing, g_lo, rhs, y0, k1, event_tol):
    """Earliest crossing among ``crossing`` faces inside ``[theta_lo, theta_hi]``.

    The crossing is first located on the dense interpolant, then polished on
    true sub-steps of size ``theta * h`` from the step start: the 4th-order
    interpolant is less accurate than the step itself, and exit times
    should carry the integration tolerance, not the interpolation error.
    """
    h = coeffs[0]
    best = None
    for i in crossing:
        lo, hi = theta_lo, theta_hi
        glo = g_lo[i]
        x_lo = dense_eval(coeffs, lo) if lo > 0 else list(coeffs[1])
        x_hi = dense_eval(coeffs, hi)
        g_hi = gfun(t0 + hi * h, x_hi)[i]
        for _ in range(EVENT_ITERATIONS):
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            x_mid = dense_eval(coeffs, mid)
            g_mid = gfun(t0 + mid * h, x_mid)[i]
            if g_mid >= 0.0:
                lo, glo, x_lo = mid, g_mid, x_mid
            else:
                hi, g_hi, x_hi = mid, g_mid, x_mid
            if g_mid == 0.0:
                break
        # keep the side closer to the face
        if abs(glo) <= abs(g_hi):
            cand = (t0 + lo * h, x_lo, i)
        else:
            cand = (t0 + hi * h, x_hi, i)
        polished = _polish_event(gfun, rhs, t0, y0, k1, h, i, theta_lo, theta_hi, g_lo[i], event_tol)
        if polished is not None:
            cand = polished
        if best is None or cand[0] < best[0]:
            best = cand
    return best


def _polish_event(gfun, rhs, t0, y0, k1, h, i, a, b, g_a, event_tol):
    def G(theta):
        if theta == 0.0:
            return g_a
        return gfun(t0 + theta * h, _dp_step(rhs, t0, y0, k1, theta * h))[i]

    ga = G(a)
    if ga < 0.0:
        a, ga = 0.0, g_a
    gb = G(b)
    if gb >= 0.0 and b < 1.0:
        b, gb = 1.0, G(1.0)
    if not (ga >= 0.0 > gb):
        return None
    if ga == 0.0:
        root = a
    else:
        root = brentq(G, a, b, xtol=max(event_tol / h, 1e-15), rtol=4 * np.finfo(float).eps, maxiter=200)
    x = _dp_step(rhs, t0, y0, k1, root * h) if root > 0 else list(y0)
    return t0 + root * h, x, i
