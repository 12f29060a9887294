"""Experiment configuration: JSON schema, validation and resolution to runtime objects."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .core import EquilibriumSpec, FieldSpec, GammaCurve, RegionSpec, SpecificationError
from .egress import FaceSampler
from .exprlang import ExpressionError
from .integrate import IntegratorConfig
from .models import CATALOG, ModelBundle, build_model
from .witness import ConvergesTo, ExitsThrough, OmegaCriteria

__all__ = ["ConfigError", "SCHEMA", "Experiment", "load_config", "resolve"]


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to exit code 64."""


_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1}
_names = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_exprs = {"type": "object", "additionalProperties": {"type": "string"}}

_curve = {
    "type": "object",
    "required": ["kind", "data"],
    "properties": {
        "kind": {"enum": ["segment", "polyline", "expression"]},
        "data": {"type": "array", "minItems": 1},
    },
    "additionalProperties": False,
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "required": ["dim", "rhs", "faces"],
                    "additionalProperties": False,
                    "properties": {
                        "dim": {"type": "integer", "minimum": 1},
                        "rhs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        "faces": _exprs,
                        "params": {"type": "object", "additionalProperties": _num},
                        "equilibrium": {
                            "type": "object",
                            "required": ["x0"],
                            "properties": {"x0": _vec, "mask": {"type": "array", "items": {"type": "boolean"}}},
                            "additionalProperties": False,
                        },
                    },
                },
            ]
        },
        "params": {"type": "object", "additionalProperties": _num},
        "controls": _exprs,
        "region": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"faces": _exprs, "boundary_tol": {"type": "number", "exclusiveMinimum": 0}},
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "abs_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_step": {"type": "number", "exclusiveMinimum": 0},
                "event_tol": {"type": "number", "exclusiveMinimum": 0},
                "grazing_window": {"type": "number", "minimum": 0},
                "dense_samples": {"type": "integer", "minimum": 1},
                "max_steps": {"type": "integer", "minimum": 1},
            },
        },
        "criteria": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "class_a": {
                    "oneOf": [
                        {
                            "type": "object",
                            "required": ["exit"],
                            "properties": {"exit": _names},
                            "additionalProperties": False,
                        },
                        {
                            "type": "object",
                            "required": ["converge"],
                            "additionalProperties": False,
                            "properties": {
                                "converge": {
                                    "type": "object",
                                    "required": ["eps_enter", "eps_stay"],
                                    "additionalProperties": False,
                                    "properties": {
                                        "x0": _vec,
                                        "mask": {"type": "array", "items": {"type": "boolean"}},
                                        "eps_enter": {"type": "number", "exclusiveMinimum": 0},
                                        "eps_stay": {"type": "number", "exclusiveMinimum": 0},
                                    },
                                }
                            },
                        },
                    ]
                },
                "class_b": {
                    "type": "object",
                    "required": ["exit"],
                    "properties": {"exit": _names},
                    "additionalProperties": False,
                },
                "horizon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "gamma": {
            "oneOf": [
                _curve,
                {
                    "type": "object",
                    "required": ["family"],
                    "additionalProperties": False,
                    "properties": {"family": {"type": "array", "items": _curve}},
                },
            ]
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"x0": _vec, "t0": _num, "horizon": {"type": "number", "exclusiveMinimum": 0}},
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "deriv_tol": {"type": "number", "minimum": 0},
                "samplers": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["face", "pin", "bracket"],
                        "additionalProperties": False,
                        "properties": {
                            "face": {"type": "string"},
                            "pin": {"type": "string"},
                            "bracket": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                            "grid": {
                                "type": "object",
                                "additionalProperties": {"type": "array", "minItems": 3, "maxItems": 3},
                            },
                            "box": {
                                "type": "object",
                                "additionalProperties": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                            },
                            "count": {"type": "integer", "minimum": 0},
                            "fixed": {"type": "object", "additionalProperties": _num},
                            "times": {"type": "array", "items": _num, "minItems": 1},
                            "seed": {"type": "integer", "minimum": 0},
                        },
                    },
                },
            },
        },
        "find": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s_tol": {"type": "number", "exclusiveMinimum": 0},
                "refine": {"type": "boolean"},
                "track_sep": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radius_V": {"type": "number", "minimum": 0},
                "radius_U": {"type": "number", "exclusiveMinimum": 0},
                "t0_grid": {"type": "array", "items": _num, "minItems": 1},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "svg": {"type": "boolean"},
                "axes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
            },
        },
    },
}


@dataclass
class Experiment:
    """Fully resolved configuration plus the runtime objects built from it."""

    resolved: dict
    field: FieldSpec
    region: RegionSpec
    equilibrium: EquilibriumSpec | None
    integrator: IntegratorConfig
    criteria: OmegaCriteria | None = None
    curves: list[GammaCurve] = field(default_factory=list)
    family: bool = False
    samplers: list[FaceSampler] = field(default_factory=list)
    bundle: ModelBundle | None = None

    @property
    def out_dir(self) -> Path:
        return Path(self.resolved["outputs"]["dir"])


def load_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def validate(raw: Mapping[str, Any]) -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def _sampler(d: Mapping[str, Any]) -> FaceSampler:
    return FaceSampler(
        face=d["face"],
        pin=d["pin"],
        bracket=tuple(d["bracket"]),
        grid={k: (float(v[0]), float(v[1]), int(v[2])) for k, v in d.get("grid", {}).items()},
        box={k: (float(v[0]), float(v[1])) for k, v in d.get("box", {}).items()},
        count=int(d.get("count", 0)),
        fixed=dict(d.get("fixed", {})),
        times=tuple(float(t) for t in d.get("times", (0.0,))),
        seed=int(d.get("seed", 0)),
    )


def _criteria(d: Mapping[str, Any], eq: EquilibriumSpec | None, default: OmegaCriteria | None) -> OmegaCriteria | None:
    if default is None and not d:
        return None
    base = default.to_dict() if default is not None else {}
    merged = {**base, **d}
    if "class_a" not in merged or "class_b" not in merged or "horizon" not in merged:
        raise ConfigError("criteria need class_a, class_b and horizon")
    a = merged["class_a"]
    if "converge" in a:
        c = a["converge"]
        if "x0" in c:
            target = EquilibriumSpec(tuple(c["x0"]), tuple(c["mask"]) if "mask" in c else None)
        elif eq is not None:
            target = eq
        else:
            raise ConfigError("convergence criterion needs x0 (the model has no equilibrium)")
        class_a = ConvergesTo(target, float(c["eps_enter"]), float(c["eps_stay"]))
    else:
        class_a = ExitsThrough(tuple(a["exit"]))
    try:
        return OmegaCriteria(class_a, ExitsThrough(tuple(merged["class_b"]["exit"])), float(merged["horizon"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def resolve(raw: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> Experiment:
    """Validate ``raw``, apply CLI overrides and build every runtime object.

    ``overrides`` may carry ``params`` (dict), ``controls`` (dict),
    ``horizon`` (float) and ``out`` (directory).
    """
    raw = copy.deepcopy(dict(raw))
    overrides = dict(overrides or {})
    if overrides.get("params"):
        raw["params"] = {**raw.get("params", {}), **overrides["params"]}
    if overrides.get("controls"):
        raw["controls"] = {**raw.get("controls", {}), **overrides["controls"]}
    validate(raw)
    try:
        return _resolve(raw, overrides)
    except (SpecificationError, ExpressionError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        raise ConfigError(str(msg)) from exc


def _resolve(raw: dict, overrides: dict) -> Experiment:
    model = raw["model"]
    bundle = None
    if isinstance(model, str):
        if model not in CATALOG:
            raise ConfigError(f"unknown model {model!r}; known: {', '.join(CATALOG)}")
        bundle = build_model(model, raw.get("params"), raw.get("controls"))
        fld, region, eq = bundle.field, bundle.region, bundle.equilibrium
        params = dict(bundle.params)
        model_out: Any = model
    else:
        if raw.get("controls"):
            raise ConfigError("controls apply to catalog models only")
        params = {**model.get("params", {}), **raw.get("params", {})}
        unknown = set(raw.get("params", {})) - set(model.get("params", {}))
        if unknown:
            raise ConfigError(f"override of undeclared parameter(s) {sorted(unknown)}")
        if len(model["rhs"]) != model["dim"]:
            raise ConfigError(f"model dim {model['dim']} but {len(model['rhs'])} right-hand sides")
        fld = FieldSpec.from_strings(model["rhs"], params)
        region = RegionSpec.from_strings(model["dim"], model["faces"], params)
        e = model.get("equilibrium")
        eq = EquilibriumSpec(tuple(e["x0"]), tuple(e["mask"]) if "mask" in e else None) if e else None
        model_out = {**model, "params": params}

    reg = raw.get("region", {})
    if reg:
        faces = reg.get("faces") or {f.name: f.source for f in region.faces}
        region = RegionSpec.from_strings(fld.dim, faces, params, reg.get("boundary_tol", region.boundary_tol))

    default_criteria = bundle.default_criteria if bundle else None
    criteria = _criteria(raw.get("criteria", {}), eq, default_criteria)
    if criteria is not None:
        missing = set(criteria.class_b.faces) | set(getattr(criteria.class_a, "faces", ()))
        missing -= set(region.face_names)
        if missing:
            raise ConfigError(f"criteria name unknown face(s) {sorted(missing)}")
    horizon = overrides.get("horizon")
    if horizon is not None and criteria is not None:
        criteria = OmegaCriteria(criteria.class_a, criteria.class_b, float(horizon))

    icfg = dict(raw.get("integrator", {}))
    integ = IntegratorConfig(**icfg)

    g = raw.get("gamma")
    family = False
    if g is None:
        curves = [bundle.default_gamma] if bundle else []
    elif "family" in g:
        family = True
        curves = [GammaCurve(c["kind"], tuple(c["data"])) for c in g["family"]]
    else:
        curves = [GammaCurve(g["kind"], tuple(g["data"]))]
    for c in curves:
        if c.dim != fld.dim:
            raise ConfigError(f"curve dimension {c.dim} differs from state dimension {fld.dim}")

    scan = dict(raw.get("scan", {}))
    if "samplers" in scan:
        samplers = [_sampler(s) for s in scan["samplers"]]
    else:
        samplers = list(bundle.samplers) if bundle else []
    for s in samplers:
        region.face(s.face)
        if s.pin not in fld.variables:
            raise ConfigError(f"sampler pin {s.pin!r} is not a state variable")

    stab = dict(raw.get("stability", {}))
    stab.setdefault("radius_V", 0.05)
    stab.setdefault("radius_U", 0.2)
    stab.setdefault("t0_grid", [0.0])
    stab.setdefault("samples", 200)
    stab.setdefault("seed", 0)
    stab.setdefault("horizon", 50.0)
    if "stability" in raw and not stab["radius_V"] < stab["radius_U"]:
        raise ConfigError(f"stability probe needs radius_V < radius_U, got {stab['radius_V']} >= {stab['radius_U']}")

    sim = dict(raw.get("simulate", {}))
    sim.setdefault("t0", 0.0)

    find = {"s_tol": 1e-9, "refine": True, "track_sep": 1e-6, **raw.get("find", {})}

    outputs = {"dir": "out", "svg": True, "axes": [0, 1] if fld.dim > 1 else [0, 0], **raw.get("outputs", {})}
    if overrides.get("out"):
        outputs["dir"] = str(overrides["out"])
    for ax in outputs["axes"]:
        if ax >= fld.dim:
            raise ConfigError(f"plot axis {ax} out of range for dimension {fld.dim}")

    resolved = {
        "model": model_out,
        "params": params,
        "controls": dict(bundle.parts) if bundle else {},
        "region": {"faces": {f.name: f.source for f in region.faces}, "boundary_tol": region.boundary_tol},
        "equilibrium": {"x0": list(eq.x0), "mask": list(eq.mask)} if eq else None,
        "integrator": integ.to_dict(),
        "criteria": criteria.to_dict() if criteria else None,
        "gamma": {"family": [c.to_dict() for c in curves]} if family else (curves[0].to_dict() if curves else None),
        "simulate": sim,
        "scan": {"K": int(scan.get("K", 4)), "deriv_tol": float(scan.get("deriv_tol", 1e-9)),
                 "samplers": [s.to_dict() for s in samplers]},
        "find": find,
        "stability": stab,
        "outputs": outputs,
    }
    if horizon is not None:
        resolved["horizon_override"] = float(horizon)
    return Experiment(resolved, fld, region, eq, integ, criteria, curves, family, samplers, bundle)

