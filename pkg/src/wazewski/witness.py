"""Constructive Ważewski witnesses.

Points of a curve Γ in the ``t = 0`` section are labelled by their fate:
class A (converge to the equilibrium, or exit through the A faces) and
class B (exit through the B faces). When both labels occur and every exit
is strict, the label map cannot be continuous, and bisection on the label
change localizes a start whose solution neither leaves W nor takes either
fate within the horizon.

Plain bisection only localizes the start to double precision, which the
flow near such a solution amplifies exponentially, so a re-simulated
midpoint usually falls off before a long horizon. :func:`bisect_gamma`
therefore refines the witness by straddling: it follows the two bracket
trajectories until they separate by ``track_sep``, re-brackets on the
segment joining them at that time, and continues. The result is a
pseudo-trajectory whose restart jumps are recorded and bounded by
``track_sep``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
from scipy.stats import qmc

from .core import (
    EquilibriumSpec,
    ExtPoint,
    FieldSpec,
    GammaCurve,
    RegionSpec,
    Trajectory,
    gamma_eval,
    masked_distance,
)
from .integrate import (
    ConvergedToTarget,
    Convergence,
    EgressOutcome,
    Exited,
    IntegrationFailure,
    IntegratorConfig,
    Survived,
    integrate_until_egress,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConvergesTo",
    "ExitsThrough",
    "OmegaCriteria",
    "Label",
    "OmegaLabel",
    "OmegaError",
    "BracketError",
    "BisectResult",
    "StabilityReport",
    "omega_classify",
    "bisect_gamma",
    "verify_uniform_stability",
    "family_sweep",
    "replace_horizon",
]


@dataclass(frozen=True)
class ConvergesTo:
    eq: EquilibriumSpec
    eps_enter: float
    eps_stay: float

    def to_dict(self) -> dict:
        return {"converge": {"x0": list(self.eq.x0), "mask": list(self.eq.mask),
                             "eps_enter": self.eps_enter, "eps_stay": self.eps_stay}}


@dataclass(frozen=True)
class ExitsThrough:
    faces: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(self.faces))

    def to_dict(self) -> dict:
        return {"exit": list(self.faces)}


@dataclass(frozen=True)
class OmegaCriteria:
    class_a: Union[ConvergesTo, ExitsThrough]
    class_b: ExitsThrough
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if isinstance(self.class_a, ExitsThrough) and set(self.class_a.faces) & set(self.class_b.faces):
            raise ValueError("class A and class B face sets overlap")

    @property
    def convergence(self) -> Convergence | None:
        a = self.class_a
        if isinstance(a, ConvergesTo):
            return Convergence(a.eq, a.eps_enter, a.eps_stay)
        return None

    @property
    def equilibrium(self) -> EquilibriumSpec | None:
        return self.class_a.eq if isinstance(self.class_a, ConvergesTo) else None

    def to_dict(self) -> dict:
        return {"class_a": self.class_a.to_dict(), "class_b": self.class_b.to_dict(), "horizon": self.horizon}


class Label(str, Enum):
    A = "class_a"
    B = "class_b"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class OmegaLabel:
    label: Label
    outcome: EgressOutcome
    trajectory: Trajectory = field(repr=False, compare=False)


class OmegaError(RuntimeError):
    def __init__(self, s: float, cause: Exception):
        super().__init__(f"integration from Γ({s!r}) failed: {cause}")
        self.s = s
        self.cause = cause


class BracketError(ValueError):
    def __init__(self, endpoint: str, label: Label, outcome: EgressOutcome):
        super().__init__(f"Γ({endpoint}) is labelled {label.value} ({outcome.kind}); "
                         f"bisection needs Γ(0) in class A and Γ(1) in class B")
        self.endpoint = endpoint
        self.label = label
        self.outcome = outcome


def _label(outcome: EgressOutcome, criteria: OmegaCriteria) -> Label:
    if isinstance(outcome, ConvergedToTarget):
        return Label.A if isinstance(criteria.class_a, ConvergesTo) else Label.UNRESOLVED
    if isinstance(outcome, Exited):
        if isinstance(criteria.class_a, ExitsThrough) and outcome.face in criteria.class_a.faces:
            return Label.A
        if outcome.face in criteria.class_b.faces:
            return Label.B
    return Label.UNRESOLVED


def _run(field, region, state, t0, criteria, cfg, t_end) -> OmegaLabel:
    traj, outcome = integrate_until_egress(
        field, region, state, t0, cfg.with_horizon(t_end - t0), criteria.convergence
    )
    return OmegaLabel(_label(outcome, criteria), outcome, traj)


def omega_classify(
    field: FieldSpec,
    region: RegionSpec,
    curve: GammaCurve,
    s: float,
    criteria: OmegaCriteria,
    cfg: IntegratorConfig = IntegratorConfig(),
) -> OmegaLabel:
    p = gamma_eval(curve, s)
    try:
        return _run(field, region, p.state, 0.0, criteria, cfg, criteria.horizon)
    except IntegrationFailure as exc:
        raise OmegaError(s, exc) from exc


@dataclass
class BisectResult:
    bracket: tuple[float, float]
    iterations: int
    witness: Trajectory = field(repr=False)
    witness_outcome: EgressOutcome
    start: ExtPoint
    horizon: float
    min_distance_to_eq: float | None = None
    terminated_early: bool = False
    restarts: list[dict] = field(default_factory=list)
    refine_iterations: int = 0
    curve_index: int | None = None

    @property
    def max_jump(self) -> float:
        return max((r["jump"] for r in self.restarts), default=0.0)

    def to_dict(self) -> dict:
        out = {
            "bracket": list(self.bracket),
            "iterations": self.iterations,
            "start": list(self.start.state),
            "horizon": self.horizon,
            "witness_outcome": self.witness_outcome.to_dict(),
            "witness_span": [self.witness.t_start, self.witness.t_end],
            "witness_steps": len(self.witness) - 1,
            "min_distance_to_eq": self.min_distance_to_eq,
            "terminated_early": self.terminated_early,
            "refine_iterations": self.refine_iterations,
            "restarts": self.restarts,
            "max_jump": self.max_jump,
        }
        if self.curve_index is not None:
            out["curve_index"] = self.curve_index
        return out


def _dist(a: Sequence[float], b: Sequence[float]) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _separation_time(ta: Trajectory, tb: Trajectory, sep: float, t_r: float) -> float:
    """Last sample time before the pair drifts more than ``sep`` apart.

    Only times strictly before either run ends are considered, so both
    states are still inside W at the returned time.
    """
    t_stop = min(ta.t_end, tb.t_end)
    best = t_r
    times = sorted({t for t in ta.sample()[0] if t_r < t < t_stop})
    for t in times:
        if _dist(ta.at(t), tb.at(t)) > sep:
            break
        best = t
    return best


def _straddle(field, region, criteria, cfg, a, b, la, lb, t_end, width_rel, sep, max_rounds):
    """Refine a witness from a bracket ``a`` (class A) / ``b`` (class B) at t = 0.

    As in the main bisection, a piece still unresolved at ``t_end`` is
    relabelled with the doubled horizon ``2 * t_end``, so a start which
    merely has not decided yet is still bisected; the witness itself is
    clipped to ``t_end``.
    """
    t_look = 2.0 * t_end
    witness: Trajectory | None = None
    restarts: list[dict] = []
    iterations = 0
    t_r = 0.0
    start = None
    for _ in range(max_rounds):
        while _dist(a, b) > width_rel * max(1.0, math.hypot(*a)):
            m = [0.5 * (x + y) for x, y in zip(a, b)]
            if m == list(a) or m == list(b):
                break
            iterations += 1
            lm = _run(field, region, m, t_r, criteria, cfg, t_end)
            if lm.label is Label.UNRESOLVED:
                lm = _run(field, region, m, t_r, criteria, cfg, t_look)
            if lm.label is Label.A:
                a, la = m, lm
            elif lm.label is Label.B:
                b, lb = m, lm
            else:
                witness = _append(witness, lm.trajectory.clip(t_end), restarts)
                start = start or ExtPoint(tuple(m), t_r)
                return witness, Survived(t_end), start, restarts, iterations
        t_next = _separation_time(la.trajectory, lb.trajectory, sep, t_r)
        start = start or ExtPoint(tuple(a), t_r)
        if t_next >= t_end:
            witness = _append(witness, la.trajectory.clip(t_end), restarts)
            return witness, Survived(t_end), start, restarts, iterations
        witness = _append(witness, la.trajectory.clip(t_next), restarts)
        if t_next <= t_r:
            witness.notes.append(f"straddle refinement stalled at t={t_r!r}")
            return witness, la.outcome, start, restarts, iterations
        t_r = t_next
        a, b = la.trajectory.at(t_r), lb.trajectory.at(t_r)
    witness.notes.append(f"straddle refinement stopped after {max_rounds} rounds at t={t_r!r}")
    return witness, Survived(t_r), start, restarts, iterations


def _append(witness: Trajectory | None, piece: Trajectory, restarts: list[dict]) -> Trajectory:
    if witness is None:
        return piece
    jump = _dist(witness.states[-1], piece.states[0])
    restarts.append({"time": piece.t_start, "jump": jump})
    witness.states[-1] = list(piece.states[0])
    witness.extend(piece)
    return witness


def bisect_gamma(
    field: FieldSpec,
    region: RegionSpec,
    curve: GammaCurve,
    criteria: OmegaCriteria,
    cfg: IntegratorConfig = IntegratorConfig(),
    s_tol: float = 1e-9,
    *,
    refine: bool = True,
    track_sep: float = 1e-6,
    track_width: float = 1e-13,
    max_rounds: int = 10_000,
) -> BisectResult:
    """Bisect Γ on the A/B label change and build the witness trajectory.

    An unresolved midpoint is retried with twice the horizon; if it is
    still unresolved it already is a witness and bisection stops early.
    Otherwise the bracket midpoint is re-simulated to the full horizon and,
    if it does not survive and ``refine`` is set, straddle refinement
    extends it (see the module docstring).
    """
    label0 = omega_classify(field, region, curve, 0.0, criteria, cfg)
    if label0.label is not Label.A:
        raise BracketError("0", label0.label, label0.outcome)
    label1 = omega_classify(field, region, curve, 1.0, criteria, cfg)
    if label1.label is not Label.B:
        raise BracketError("1", label1.label, label1.outcome)

    s_lo, s_hi = 0.0, 1.0
    lab_lo, lab_hi = label0, label1
    iterations = 0
    early: tuple[float, OmegaLabel] | None = None
    while s_hi - s_lo > s_tol:
        mid = 0.5 * (s_lo + s_hi)
        if not s_lo < mid < s_hi:
            break
        iterations += 1
        lab = omega_classify(field, region, curve, mid, criteria, cfg)
        if lab.label is Label.UNRESOLVED:
            longer = replace_horizon(criteria, 2 * criteria.horizon)
            lab2 = omega_classify(field, region, curve, mid, longer, cfg)
            if lab2.label is Label.UNRESOLVED:
                early = (mid, lab)
                break
            lab = lab2
        if lab.label is Label.A:
            s_lo, lab_lo = mid, lab
        else:
            s_hi, lab_hi = mid, lab
        assert lab_lo.label is Label.A and lab_hi.label is Label.B

    eq = criteria.equilibrium
    if early is not None:
        mid, lab = early
        result = BisectResult((s_lo, s_hi), iterations, lab.trajectory, lab.outcome,
                              gamma_eval(curve, mid), criteria.horizon, terminated_early=True)
    else:
        mid = 0.5 * (s_lo + s_hi)
        start = gamma_eval(curve, mid)
        lab = omega_classify(field, region, curve, mid, criteria, cfg)
        result = BisectResult((s_lo, s_hi), iterations, lab.trajectory, lab.outcome, start, criteria.horizon)
        if refine and not isinstance(lab.outcome, Survived):
            a = gamma_eval(curve, s_lo).state
            b = gamma_eval(curve, s_hi).state
            try:
                witness, outcome, start, restarts, extra = _straddle(
                    field, region, criteria, cfg, a, b, lab_lo, lab_hi,
                    criteria.horizon, track_width, track_sep, max_rounds,
                )
            except IntegrationFailure as exc:
                logger.warning("straddle refinement failed: %s", exc)
            else:
                result.witness = witness
                result.witness_outcome = outcome
                result.start = start
                result.restarts = restarts
                result.refine_iterations = extra
    if eq is not None:
        _, xs = result.witness.sample()
        result.min_distance_to_eq = min(masked_distance(x, eq) for x in xs)
    return result


def replace_horizon(criteria: OmegaCriteria, horizon: float) -> OmegaCriteria:
    return OmegaCriteria(criteria.class_a, criteria.class_b, horizon)


def family_sweep(
    field: FieldSpec,
    region: RegionSpec,
    curves: Sequence[GammaCurve],
    criteria: OmegaCriteria,
    cfg: IntegratorConfig = IntegratorConfig(),
    s_tol: float = 1e-9,
    **kwargs,
) -> tuple[list[BisectResult], list[tuple[int, BracketError]]]:
    """Run :func:`bisect_gamma` on every curve; curves failing the bracket check are returned separately."""
    results: list[BisectResult] = []
    rejected: list[tuple[int, BracketError]] = []
    for i, curve in enumerate(curves):
        try:
            res = bisect_gamma(field, region, curve, criteria, cfg, s_tol, **kwargs)
        except BracketError as exc:
            logger.warning("curve %d rejected: %s", i, exc)
            rejected.append((i, exc))
            continue
        res.curve_index = i
        results.append(res)
    return results, rejected


@dataclass
class StabilityReport:
    eq: EquilibriumSpec
    radius_V: float
    radius_U: float
    t0_grid: tuple[float, ...]
    samples: int
    horizon: float
    seed: int
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "equilibrium": {"x0": list(self.eq.x0), "mask": list(self.eq.mask)},
            "radius_V": self.radius_V,
            "radius_U": self.radius_U,
            "t0_grid": list(self.t0_grid),
            "samples": self.samples,
            "horizon": self.horizon,
            "seed": self.seed,
            "passed": self.passed,
            "failures": self.failures,
            "note": "sampled evidence at the listed initial times only, not a proof of uniform stability",
        }


def ball_region(field: FieldSpec, eq: EquilibriumSpec, radius: float) -> RegionSpec:
    """The open ball of the given radius in the masked coordinates, as a one-face region."""
    terms = " + ".join(f"(x{i + 1} - ({eq.x0[i]!r}))^2" for i in eq.indices)
    return RegionSpec.from_strings(field.dim, {"U": f"{radius!r}^2 - ({terms})"}, field.params)


def ball_samples(eq: EquilibriumSpec, radius: float, n: int, seed: int = 0) -> list[list[float]]:
    """``n`` scrambled-Halton points of the closed masked ball around ``eq.x0``."""
    if radius == 0 or n <= 0:
        return [list(eq.x0)] if n > 0 else []
    idx = eq.indices
    halton = qmc.Halton(d=len(idx), scramble=True, seed=seed)
    out: list[list[float]] = []
    while len(out) < n:
        cube = 2.0 * halton.random(max(64, 2 * n)) - 1.0
        for row in cube:
            if float(np.dot(row, row)) <= 1.0:
                x = list(eq.x0)
                for i, v in zip(idx, row):
                    x[i] += radius * float(v)
                out.append(x)
                if len(out) == n:
                    break
    return out


def verify_uniform_stability(
    field: FieldSpec,
    eq: EquilibriumSpec,
    radius_V: float,
    radius_U: float,
    t0_grid: Sequence[float] = (0.0,),
    n_samples: int = 200,
    cfg: IntegratorConfig = IntegratorConfig(),
    seed: int = 0,
) -> StabilityReport:
    """Probe that starts in the V-ball never leave the U-ball, for each initial time."""
    if not 0 <= radius_V < radius_U:
        raise ValueError(f"need 0 <= radius_V < radius_U, got {radius_V}, {radius_U}")
    region = ball_region(field, eq, radius_U)
    starts = ball_samples(eq, radius_V, n_samples, seed)
    report = StabilityReport(eq, radius_V, radius_U, tuple(t0_grid), len(starts), cfg.horizon, seed)
    for t0 in t0_grid:
        for x in starts:
            try:
                _, outcome = integrate_until_egress(field, region, x, t0, cfg)
            except IntegrationFailure as exc:
                report.failures.append({"x": x, "t0": t0, "escape_time": None, "cause": str(exc)})
                continue
            if isinstance(outcome, Exited):
                report.failures.append({"x": x, "t0": t0, "escape_time": outcome.exit.time})
    return report
