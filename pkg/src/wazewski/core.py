"""Domain types: regions, fields, equilibria, curves and trajectories."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .exprlang import (
    Expr,
    EvaluationError,
    compile_function,
    evaluate,
    format_expr,
    free_names,
    parse_expression,
)

__all__ = [
    "SpecificationError",
    "ExtPoint",
    "BoundaryFace",
    "RegionSpec",
    "FieldSpec",
    "EquilibriumSpec",
    "GammaCurve",
    "Trajectory",
    "Membership",
    "MembershipKind",
    "state_names",
    "region_membership",
    "gamma_eval",
    "masked_distance",
]


class SpecificationError(ValueError):
    """A field, region or curve description is inconsistent."""


def state_names(dim: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(dim))


def _check_names(exprs: Sequence[Expr], allowed: set[str], what: str) -> None:
    for e in exprs:
        missing = free_names(e) - allowed
        if missing:
            raise SpecificationError(f"{what} references unbound names {sorted(missing)}")


@dataclass(frozen=True)
class ExtPoint:
    """A point ``(x, t)`` of the extended phase space."""

    state: tuple[float, ...]
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "state", tuple(float(v) for v in self.state))
        object.__setattr__(self, "time", float(self.time))
        if not all(math.isfinite(v) for v in self.state) or not math.isfinite(self.time):
            raise ValueError(f"non-finite point {self.state!r} at t={self.time!r}")

    @property
    def dim(self) -> int:
        return len(self.state)


@dataclass(frozen=True)
class BoundaryFace:
    name: str
    g: Expr
    source: str = ""

    @property
    def text(self) -> str:
        return self.source or format_expr(self.g)


@dataclass(frozen=True)
class RegionSpec:
    """``W = {all g_i(x, t) > 0}`` with the boundary band ``|g| <= boundary_tol``."""

    dim: int
    faces: tuple[BoundaryFace, ...]
    params: Mapping[str, float] = field(default_factory=dict)
    boundary_tol: float = 1e-10

    def __post_init__(self):
        if not self.faces:
            raise SpecificationError("a region needs at least one face")
        names = [f.name for f in self.faces]
        if len(set(names)) != len(names):
            raise SpecificationError(f"duplicate face names in {names}")
        allowed = set(state_names(self.dim)) | {"t"} | set(self.params)
        _check_names([f.g for f in self.faces], allowed, "region")
        object.__setattr__(self, "faces", tuple(self.faces))
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_strings(
        cls,
        dim: int,
        faces: Mapping[str, str],
        params: Mapping[str, float] | None = None,
        boundary_tol: float = 1e-10,
    ) -> "RegionSpec":
        params = dict(params or {})
        declared = list(state_names(dim)) + ["t"] + list(params)
        parsed = tuple(
            BoundaryFace(name, parse_expression(src, declared), src) for name, src in faces.items()
        )
        return cls(dim, parsed, params, boundary_tol)

    @property
    def face_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.faces)

    def face(self, name: str) -> BoundaryFace:
        for f in self.faces:
            if f.name == name:
                return f
        raise KeyError(f"no face named {name!r}; faces are {self.face_names}")

    @cached_property
    def compiled(self):
        """Vector function ``(t, x) -> [g_1, ..., g_m]``."""
        return compile_function([f.g for f in self.faces], state_names(self.dim), self.params)

    def values(self, state: Sequence[float], t: float) -> list[float]:
        try:
            return self.compiled(t, state)
        except (ArithmeticError, ValueError):
            env = self.env(state, t)
            for f in self.faces:
                evaluate(f.g, env)  # raises EvaluationError naming the node
            raise

    def env(self, state: Sequence[float], t: float) -> dict[str, float]:
        env = dict(self.params)
        env.update(zip(state_names(self.dim), (float(v) for v in state)))
        env["t"] = float(t)
        return env


@dataclass(frozen=True)
class FieldSpec:
    """Right-hand side ``x' = v(x, t)`` given as one expression per coordinate."""

    dim: int
    rhs: tuple[Expr, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1 or len(self.rhs) != self.dim:
            raise SpecificationError(f"need {self.dim} right-hand sides, got {len(self.rhs)}")
        allowed = set(state_names(self.dim)) | {"t"} | set(self.params)
        _check_names(self.rhs, allowed, "field")
        object.__setattr__(self, "rhs", tuple(self.rhs))
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_strings(cls, rhs: Sequence[str], params: Mapping[str, float] | None = None) -> "FieldSpec":
        params = dict(params or {})
        declared = list(state_names(len(rhs))) + ["t"] + list(params)
        return cls(len(rhs), tuple(parse_expression(s, declared) for s in rhs), params)

    @property
    def variables(self) -> tuple[str, ...]:
        return state_names(self.dim)

    @property
    def declared(self) -> list[str]:
        return list(self.variables) + ["t"] + list(self.params)

    def parse(self, source: str) -> Expr:
        """Parse an auxiliary expression (face, observable) in this field's namespace."""
        return parse_expression(source, self.declared)

    @cached_property
    def compiled(self):
        return compile_function(self.rhs, self.variables, self.params)

    def __call__(self, t: float, state: Sequence[float]) -> list[float]:
        return self.compiled(t, state)

    def evaluate(self, state: Sequence[float], t: float) -> list[float]:
        """Slow path that reports the failing node through EvaluationError."""
        env = dict(self.params)
        env.update(zip(self.variables, (float(v) for v in state)))
        env["t"] = float(t)
        return [evaluate(e, env) for e in self.rhs]


@dataclass(frozen=True)
class EquilibriumSpec:
    """Target point; unmasked coordinates span the invariant manifold ``{x0} x N``."""

    x0: tuple[float, ...]
    mask: tuple[bool, ...] | None = None

    def __post_init__(self):
        x0 = tuple(float(v) for v in self.x0)
        mask = tuple(bool(m) for m in self.mask) if self.mask is not None else (True,) * len(x0)
        if len(mask) != len(x0):
            raise SpecificationError("mask length differs from x0")
        if not any(mask):
            raise SpecificationError("at least one coordinate must be masked in")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "mask", mask)

    @cached_property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, m in enumerate(self.mask) if m)


def masked_distance(a: Sequence[float], eq: EquilibriumSpec) -> float:
    if len(a) != len(eq.x0):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(eq.x0)}")
    x0 = eq.x0
    return math.sqrt(sum((a[i] - x0[i]) ** 2 for i in eq.indices))


@dataclass(frozen=True)
class GammaCurve:
    """A path in the ``t = 0`` section, parametrized over ``s in [0, 1]``.

    ``kind`` is ``"segment"`` (``data`` = two endpoints), ``"polyline"``
    (``data`` = vertices, uniform in arc-length) or ``"expression"``
    (``data`` = one expression string per coordinate in the variable ``s``).
    """

    kind: str
    data: tuple

    def __post_init__(self):
        if self.kind in ("segment", "polyline"):
            pts = tuple(tuple(float(v) for v in p) for p in self.data)
            if len(pts) < 2 or (self.kind == "segment" and len(pts) != 2):
                raise SpecificationError(f"{self.kind} needs {'2' if self.kind == 'segment' else '>= 2'} points")
            if len({len(p) for p in pts}) != 1:
                raise SpecificationError("curve points have different dimensions")
            object.__setattr__(self, "data", pts)
        elif self.kind == "expression":
            object.__setattr__(self, "data", tuple(str(s) for s in self.data))
        else:
            raise SpecificationError(f"unknown curve kind {self.kind!r}")

    @classmethod
    def segment(cls, a: Sequence[float], b: Sequence[float]) -> "GammaCurve":
        return cls("segment", (tuple(a), tuple(b)))

    @property
    def dim(self) -> int:
        return len(self.data[0]) if self.kind != "expression" else len(self.data)

    @cached_property
    def _exprs(self):
        return [parse_expression(src, ["s"]) for src in self.data]

    @cached_property
    def _cumlen(self) -> list[float]:
        lengths = [0.0]
        for p, q in zip(self.data, self.data[1:]):
            lengths.append(lengths[-1] + math.dist(p, q))
        return lengths

    def to_dict(self) -> dict:
        return {"kind": self.kind, "data": [list(p) for p in self.data] if self.kind != "expression" else list(self.data)}


def gamma_eval(curve: GammaCurve, s: float) -> ExtPoint:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"curve parameter s={s!r} outside [0, 1]")
    if curve.kind == "segment":
        a, b = curve.data
        if s == 0.0:
            return ExtPoint(a, 0.0)
        if s == 1.0:
            return ExtPoint(b, 0.0)
        return ExtPoint(tuple((1.0 - s) * p + s * q for p, q in zip(a, b)), 0.0)
    if curve.kind == "polyline":
        if s == 1.0:
            return ExtPoint(curve.data[-1], 0.0)
        cum = curve._cumlen
        target = s * cum[-1]
        i = max(0, min(bisect.bisect_right(cum, target) - 1, len(cum) - 2))
        seg = cum[i + 1] - cum[i]
        u = (target - cum[i]) / seg if seg > 0 else 0.0
        p, q = curve.data[i], curve.data[i + 1]
        return ExtPoint(tuple((1.0 - u) * a + u * b for a, b in zip(p, q)), 0.0)
    try:
        return ExtPoint(tuple(evaluate(e, {"s": s}) for e in curve._exprs), 0.0)
    except EvaluationError as exc:
        raise SpecificationError(f"curve expression failed at s={s}: {exc}") from exc


class MembershipKind(str, Enum):
    INSIDE = "inside"
    ON_BOUNDARY = "on_boundary"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class Membership:
    kind: MembershipKind
    active: tuple[str, ...] = ()


def region_membership(p: ExtPoint, region: RegionSpec) -> Membership:
    if p.dim != region.dim:
        raise ValueError(f"point has dimension {p.dim}, region {region.dim}")
    try:
        values = region.values(p.state, p.time)
    except EvaluationError as exc:
        raise SpecificationError(str(exc)) from exc
    tol = region.boundary_tol
    if all(g > tol for g in values):
        return Membership(MembershipKind.INSIDE)
    if any(g < -tol for g in values):
        return Membership(MembershipKind.OUTSIDE)
    active = tuple(f.name for f, g in zip(region.faces, values) if abs(g) <= tol)
    return Membership(MembershipKind.ON_BOUNDARY, active)


@dataclass
class Trajectory:
    """Accepted steps of one integration with their dense interpolants.

    ``dense[i]`` holds ``(h, r1, ..., r5)`` for the step starting at
    ``times[i]``; the step may be cut short at an event, so ``times[i + 1]``
    can precede ``times[i] + h``.
    """

    times: list[float]
    states: list[list[float]]
    dense: list[tuple] = field(default_factory=list)
    grazing: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.states[0])

    @property
    def t_start(self) -> float:
        return self.times[0]

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def __len__(self) -> int:
        return len(self.times)

    def at(self, t: float) -> list[float]:
        if not self.times[0] <= t <= self.times[-1]:
            raise ValueError(f"t={t} outside trajectory span [{self.times[0]}, {self.times[-1]}]")
        i = bisect.bisect_right(self.times, t) - 1
        if i >= len(self.dense):
            return list(self.states[-1])
        return dense_eval(self.dense[i], (t - self.times[i]) / self.dense[i][0])

    def array(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.times), np.asarray(self.states)

    def sample(self, per_step: int = 4) -> tuple[list[float], list[list[float]]]:
        """Times and states at ``per_step`` evenly spaced points of every step."""
        ts = [self.times[0]]
        xs = [list(self.states[0])]
        for i, coeffs in enumerate(self.dense):
            t0, t1 = self.times[i], self.times[i + 1]
            for j in range(1, per_step):
                t = t0 + (j / per_step) * (t1 - t0)
                ts.append(t)
                xs.append(dense_eval(coeffs, (t - t0) / coeffs[0]))
            ts.append(t1)
            xs.append(list(self.states[i + 1]))
        return ts, xs

    def clip(self, t_stop: float) -> "Trajectory":
        """Copy of the trajectory restricted to ``[t_start, t_stop]``."""
        if t_stop >= self.times[-1]:
            return Trajectory(list(self.times), [list(x) for x in self.states], list(self.dense),
                              list(self.grazing), list(self.notes))
        i = bisect.bisect_right(self.times, t_stop) - 1
        times = self.times[: i + 1]
        states = [list(x) for x in self.states[: i + 1]]
        dense = self.dense[:i]
        if t_stop > times[-1]:
            times.append(t_stop)
            states.append(self.at(t_stop))
            dense.append(self.dense[i])
        grazing = [g for g in self.grazing if g["time"] <= t_stop]
        return Trajectory(times, states, dense, grazing, list(self.notes))

    def extend(self, other: "Trajectory") -> None:
        """Append ``other``, which must start where this trajectory ends in time."""
        if other.times[0] != self.times[-1]:
            raise ValueError("trajectories are not contiguous in time")
        self.times.extend(other.times[1:])
        self.states.extend(other.states[1:])
        self.dense.extend(other.dense)
        self.grazing.extend(other.grazing)
        self.notes.extend(other.notes)


def dense_eval(coeffs: tuple, theta: float) -> list[float]:
    """Evaluate a step's interpolant; ``coeffs = (h, r1, ..., r5)``."""
    _, r1, r2, r3, r4, r5 = coeffs
    u = 1.0 - theta
    return [
        a + theta * (b + u * (c + theta * (d + u * e)))
        for a, b, c, d, e in zip(r1, r2, r3, r4, r5)
    ]
