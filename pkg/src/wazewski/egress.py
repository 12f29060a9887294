"""Egress classification of boundary points from Lie-derivative sign chains."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from .core import (
    ExtPoint,
    FieldSpec,
    MembershipKind,
    RegionSpec,
    region_membership,
)
from .exprlang import Expr, evaluate, iter_lie_derivatives, partial_derivative

logger = logging.getLogger(__name__)

__all__ = [
    "Kind",
    "Classification",
    "FaceSampler",
    "ScanReport",
    "EgressPointNotFound",
    "classify_face",
    "classify_point",
    "scan_boundary",
    "egress_section_point",
]


class Kind(str, Enum):
    INGRESS = "ingress"
    STRICT_EGRESS = "strict_egress"
    EGRESS_NOT_STRICT = "egress_not_strict"
    EXTERNALLY_TANGENT = "externally_tangent"
    UNDETERMINED = "undetermined"
    CORNER = "corner"


# leaving immediately: the trajectory is outside the closure right after p
LEAVING = (Kind.STRICT_EGRESS, Kind.EXTERNALLY_TANGENT)


@dataclass(frozen=True)
class Classification:
    kind: Kind
    face: str | None = None
    derivatives: tuple[float, ...] = ()
    order: int | None = None
    faces: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "face": self.face, "derivatives": list(self.derivatives)}
        if self.order is not None:
            out["order"] = self.order
        if self.faces:
            out["faces"] = list(self.faces)
        return out


class EgressPointNotFound(LookupError):
    pass


def classify_face(
    field: FieldSpec, g: Expr, p: ExtPoint, K: int = 4, deriv_tol: float = 1e-9
) -> tuple[Kind, tuple[float, ...], int]:
    """Decide the local behaviour of ``g`` along the solution through ``p``.

    Returns ``(kind, derivatives computed so far, order)``; ``order`` is the
    first index with ``|d_k| > deriv_tol`` (or ``K`` when none qualifies).
    """
    ds: list[float] = []
    for d in iter_lie_derivatives(field, g, p):
        ds.append(d)
        k = len(ds)
        if abs(d) > deriv_tol:
            if k % 2:
                kind = Kind.STRICT_EGRESS if d < 0 else Kind.INGRESS
            else:
                kind = Kind.EGRESS_NOT_STRICT if d > 0 else Kind.EXTERNALLY_TANGENT
            return kind, tuple(ds), k
        if k >= K:
            return Kind.UNDETERMINED, tuple(ds), K
    raise AssertionError("unreachable")  # pragma: no cover


def classify_point(
    field: FieldSpec, region: RegionSpec, p: ExtPoint, K: int = 4, deriv_tol: float = 1e-9
) -> Classification:
    mem = region_membership(p, region)
    if mem.kind is not MembershipKind.ON_BOUNDARY:
        raise ValueError(f"point {p.state} at t={p.time} is {mem.kind.value}, not on the boundary")
    if len(mem.active) > 1:
        return Classification(Kind.CORNER, faces=mem.active)
    name = mem.active[0]
    kind, ds, order = classify_face(field, region.face(name).g, p, K, deriv_tol)
    return Classification(kind, name, ds, order)


@dataclass(frozen=True)
class FaceSampler:
    """Sampling plan for one face.

    Every sample fixes all coordinates except ``pin``, which is then solved
    for ``g = 0`` inside ``bracket``. Free coordinates come from ``grid``
    (``var -> (lo, hi, n)``, a Cartesian product) or from ``count``
    scrambled Halton points in ``box`` (``var -> (lo, hi)``); ``fixed`` sets
    the rest (unlisted coordinates are 0).
    """

    face: str
    pin: str
    bracket: tuple[float, float]
    grid: Mapping[str, tuple[float, float, int]] = field(default_factory=dict)
    box: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    count: int = 0
    fixed: Mapping[str, float] = field(default_factory=dict)
    times: tuple[float, ...] = (0.0,)
    seed: int = 0

    def points(self) -> list[dict[str, float]]:
        combos: list[dict[str, float]] = []
        if self.grid:
            axes = []
            for var, (lo, hi, n) in self.grid.items():
                n = int(n)
                axes.append([(var, lo + (hi - lo) * (i / (n - 1)) if n > 1 else lo) for i in range(n)])
            combos.extend(dict(c) for c in itertools.product(*axes))
        if self.count and self.box:
            names = list(self.box)
            halton = qmc.Halton(d=len(names), scramble=True, seed=self.seed)
            unit = halton.random(self.count)
            lo = np.array([self.box[v][0] for v in names])
            hi = np.array([self.box[v][1] for v in names])
            for row in qmc.scale(unit, lo, hi) if len(names) else unit:
                combos.append({v: float(x) for v, x in zip(names, row)})
        if not combos:
            combos = [{}]
        return combos

    def to_dict(self) -> dict:
        return {
            "face": self.face,
            "pin": self.pin,
            "bracket": list(self.bracket),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "box": {k: list(v) for k, v in self.box.items()},
            "count": self.count,
            "fixed": dict(self.fixed),
            "times": list(self.times),
            "seed": self.seed,
        }


@dataclass
class ScanReport:
    sampled: int = 0
    skipped: int = 0
    tallies: dict[str, dict[str, int]] = field(default_factory=dict)
    violations: list[dict] = field(default_factory=list)
    undetermined: list[dict] = field(default_factory=list)
    corners: list[dict] = field(default_factory=list)
    samples: list[dict] = field(default_factory=list)
    K: int = 4
    deriv_tol: float = 1e-9
    samplers: list[dict] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        """True when no sampled point is an egress point without strict egress."""
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "sampled": self.sampled,
            "skipped": self.skipped,
            "K": self.K,
            "deriv_tol": self.deriv_tol,
            "tallies": self.tallies,
            "violations": self.violations,
            "undetermined": self.undetermined,
            "corners": self.corners,
            "samplers": self.samplers,
            "samples": self.samples,
        }


def _pin(region: RegionSpec, face: Expr, env: dict[str, float], var: str, bracket) -> float | None:
    def g(v: float) -> float:
        env[var] = v
        return evaluate(face, env)

    lo, hi = bracket
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if glo * ghi > 0:
        return None
    try:
        return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    except RuntimeError:
        return None


def scan_boundary(
    field: FieldSpec,
    region: RegionSpec,
    samplers: Sequence[FaceSampler],
    K: int = 4,
    deriv_tol: float = 1e-9,
) -> ScanReport:
    report = ScanReport(K=K, deriv_tol=deriv_tol, samplers=[s.to_dict() for s in samplers])
    names = field.variables
    for sampler in samplers:
        face = region.face(sampler.face)
        tally = report.tallies.setdefault(sampler.face, {k.value: 0 for k in Kind})
        for combo in sampler.points():
            for t in sampler.times:
                env = dict(region.params)
                env.update({v: 0.0 for v in names})
                env.update(sampler.fixed)
                env.update(combo)
                env["t"] = float(t)
                root = _pin(region, face.g, env, sampler.pin, sampler.bracket)
                if root is None:
                    report.skipped += 1
                    continue
                env[sampler.pin] = root
                p = ExtPoint(tuple(env[v] for v in names), t)
                if region_membership(p, region).kind is not MembershipKind.ON_BOUNDARY:
                    report.skipped += 1
                    continue
                c = classify_point(field, region, p, K, deriv_tol)
                record = {"state": list(p.state), "time": p.time, **c.to_dict()}
                report.samples.append(record)
                report.sampled += 1
                tally[c.kind.value] += 1
                if c.kind is Kind.EGRESS_NOT_STRICT:
                    report.violations.append(record)
                elif c.kind is Kind.UNDETERMINED:
                    report.undetermined.append(record)
                elif c.kind is Kind.CORNER:
                    report.corners.append(record)
    if report.corners:
        logger.warning("%d corner samples excluded from the egress verdict", len(report.corners))
    return report


def egress_section_point(
    region: RegionSpec,
    field: FieldSpec,
    face: str,
    hint: ExtPoint,
    K: int = 4,
    deriv_tol: float = 1e-9,
    budget: int = 24,
    step: float = 1e-3,
) -> ExtPoint:
    """Find a ``t = 0`` strict egress point on ``face`` close to ``hint``.

    The hint is projected onto the face by Newton iteration along the
    coordinate with the largest partial derivative of ``g``; if that point
    is not a strict egress point, the other coordinates are nudged by
    geometrically growing offsets (``budget`` scales) until one is.
    """
    g = region.face(face).g
    names = field.variables
    base = dict(region.params)
    base.update(zip(names, hint.state))
    base["t"] = 0.0
    pin = max(names, key=lambda v: abs(partial_derivative(g, base, v)))

    def project(env: dict[str, float]) -> ExtPoint | None:
        env = dict(env)
        for _ in range(60):
            val = evaluate(g, env)
            if val == 0.0:
                break
            slope = partial_derivative(g, env, pin)
            if slope == 0.0:
                return None
            new = env[pin] - val / slope
            if new == env[pin]:
                break
            env[pin] = new
        p = ExtPoint(tuple(env[v] for v in names), 0.0)
        mem = region_membership(p, region)
        if mem.kind is not MembershipKind.ON_BOUNDARY or mem.active != (face,):
            return None
        return p

    def strict(env) -> ExtPoint | None:
        p = project(env)
        if p is not None and classify_point(field, region, p, K, deriv_tol).kind is Kind.STRICT_EGRESS:
            return p
        return None

    found = strict(base)
    if found is not None:
        return found
    others = [v for v in names if v != pin]
    for k in range(budget):
        delta = step * 2.0 ** k
        for v in others:
            for sign in (1.0, -1.0):
                env = dict(base)
                env[v] = base[v] + sign * delta
                found = strict(env)
                if found is not None:
                    return found
    raise EgressPointNotFound(f"no strict egress point on face {face!r} near {hint.state}")
