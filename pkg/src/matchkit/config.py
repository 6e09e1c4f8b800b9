"""Run configuration: JSON schema, validation, and object construction.

Configs are strict: unknown keys are rejected so that a typo in a
tolerance name cannot silently fall back to a default.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np
from jsonschema import Draft202012Validator

from .errors import ConfigurationError
from .expressions import compile_expression
from .geometry import DensityMeasure, Domain, Measure1D
from .levelset import BlockSpec, SolverConfig
from .surplus import catalog_surplus, parse_surplus_expression

_BOX = {
    "type": "object",
    "properties": {
        "lo": {"type": "array", "items": {"type": "number"}},
        "hi": {"type": "array", "items": {"type": "number"}},
    },
    "required": ["lo", "hi"],
    "additionalProperties": False,
}

_DOMAIN = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "box"}, "lo": _BOX["properties"]["lo"],
                           "hi": _BOX["properties"]["hi"]},
            "required": ["kind", "lo", "hi"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "disk_sector"},
                "center": {"type": "array", "items": {"type": "number"}},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "orthants": {"type": ["array", "null"],
                             "items": {"enum": [1, -1, None]}},
            },
            "required": ["kind", "center", "radius"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "box_union"},
                           "boxes": {"type": "array", "items": _BOX, "minItems": 1}},
            "required": ["kind", "boxes"],
            "additionalProperties": False,
        },
    ]
}

_DENSITY = {
    "oneOf": [
        {"const": "uniform"},
        {
            "type": "object",
            "properties": {"expression": {"type": "string"}},
            "required": ["expression"],
            "additionalProperties": False,
        },
    ]
}

_SURPLUS = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"catalog": {"type": "string"}, "params": {"type": "object"}},
            "required": ["catalog"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"expression": {"type": "string"},
                           "m": {"type": "integer", "minimum": 1},
                           "aliases": {"type": "object",
                                       "additionalProperties": {"type": "string"}}},
            "required": ["expression", "m"],
            "additionalProperties": False,
        },
    ]
}

_TOLS = {
    "type": "object",
    "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in
                   ("split_tol", "plateau_tol", "mass_tol", "stab_tol", "cc_tol",
                    "inclusion_tol", "angle_tol", "dynamic_fail_tol")},
    "additionalProperties": False,
}

_SCHEMA = {
    "type": "object",
    "properties": {
        "problem": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {"preset": {"type": "string"},
                                   "params": {"type": "object"}},
                    "required": ["preset"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {
                        "surplus": _SURPLUS,
                        "mu": {
                            "type": "object",
                            "properties": {"domain": _DOMAIN, "density": _DENSITY,
                                           "resolution": {"type": "integer", "minimum": 8},
                                           "subsample": {"type": "integer", "minimum": 1}},
                            "required": ["domain"],
                            "additionalProperties": False,
                        },
                        "nu": {
                            "type": "object",
                            "properties": {"support": {"type": "array",
                                                       "items": {"type": "number"},
                                                       "minItems": 2, "maxItems": 2},
                                           "density": _DENSITY},
                            "required": ["support"],
                            "additionalProperties": False,
                        },
                    },
                    "required": ["surplus", "mu", "nu"],
                    "additionalProperties": False,
                },
            ]
        },
        "solver": {
            "type": "object",
            "properties": {
                "y_grid": {"type": "integer", "minimum": 3},
                "v0": {"type": "number"},
                "tolerances": _TOLS,
                "decomposition": {
                    "type": "object",
                    "properties": {
                        "blocks": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "properties": {
                                    "x_lo": {"type": "array", "items": {"type": "number"}},
                                    "x_hi": {"type": "array", "items": {"type": "number"}},
                                    "y_lo": {"type": "number"},
                                    "y_hi": {"type": "number"},
                                },
                                "required": ["x_lo", "x_hi", "y_lo", "y_hi"],
                                "additionalProperties": False,
                            },
                        }
                    },
                    "required": ["blocks"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "oracle": {
            "type": "object",
            "properties": {
                "enabled": {"type": "boolean"},
                "atoms": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "ratio_tol": {"type": "number", "exclusiveMinimum": 0},
                "rmse_tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
                "iso_levels": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "required": ["problem"],
    "additionalProperties": False,
}

_VALIDATOR = Draft202012Validator(_SCHEMA)


def validate_config(cfg: dict) -> None:
    errors = sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.path) or "(root)"
        raise ConfigurationError(f"config invalid at {path}: {e.message}")


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigurationError(
            f"malformed JSON at line {err.lineno}, column {err.colno}: {err.msg}"
        ) from err
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _build_domain(spec: dict) -> Domain:
    kind = spec["kind"]
    if kind == "box":
        return Domain.box(spec["lo"], spec["hi"])
    if kind == "disk_sector":
        orth = spec.get("orthants")
        return Domain.disk_sector(spec["center"], spec["radius"], orth)
    return Domain.box_union([Domain.box(b["lo"], b["hi"]) for b in spec["boxes"]])


def _density_callable(spec, m: int):
    if spec is None or spec == "uniform":
        return None
    fn = compile_expression(spec["expression"], [f"x{i + 1}" for i in range(m)])

    def dens(pts):
        env = {f"x{i + 1}": pts[..., i] for i in range(m)}
        return np.asarray(fn(**env), dtype=float)

    return dens


def _density_1d(spec):
    if spec is None or spec == "uniform":
        return None
    fn = compile_expression(spec["expression"], ["y"])
    return lambda y: np.asarray(fn(y=np.asarray(y, dtype=float)), dtype=float)


def build_solver_config(cfg: dict) -> SolverConfig:
    sv = cfg.get("solver", {})
    kw = {}
    if "y_grid" in sv:
        kw["y_grid"] = sv["y_grid"]
    if "v0" in sv:
        kw["v0"] = sv["v0"]
    tol = sv.get("tolerances", {})
    for key in ("split_tol", "plateau_tol", "stab_tol", "cc_tol",
                "inclusion_tol", "angle_tol", "dynamic_fail_tol"):
        if key in tol:
            kw[key] = tol[key]
    dec = sv.get("decomposition")
    if dec:
        kw["blocks"] = tuple(
            BlockSpec(x_lo=tuple(b["x_lo"]), x_hi=tuple(b["x_hi"]),
                      y_lo=b["y_lo"], y_hi=b["y_hi"]) for b in dec["blocks"])
    return SolverConfig(**kw)


def build_problem(cfg: dict):
    """Instantiate (surplus, mu, nu, solver_config) or a preset from a config."""
    from .applications import get_preset

    prob = cfg["problem"]
    if "preset" in prob:
        preset = get_preset(prob["preset"], **prob.get("params", {}))
        sv = cfg.get("solver", {})
        if sv:
            base = build_solver_config(cfg)
            if not sv.get("decomposition"):
                from dataclasses import replace
                base = replace(base, blocks=preset.config.blocks)
            preset.config = base
        return preset

    sspec = prob["surplus"]
    if "catalog" in sspec:
        s = catalog_surplus(sspec["catalog"], sspec.get("params", {}))
    else:
        s = parse_surplus_expression(sspec["expression"], sspec["m"],
                                     sspec.get("aliases"))
    dom = _build_domain(prob["mu"]["domain"])
    if dom.dim != s.m:
        raise ConfigurationError(
            f"domain dimension {dom.dim} does not match surplus m={s.m}")
    mu = DensityMeasure(dom, _density_callable(prob["mu"].get("density"), s.m),
                        resolution=prob["mu"].get("resolution"),
                        subsample=prob["mu"].get("subsample"))
    lo, hi = prob["nu"]["support"]
    if not hi > lo:
        raise ConfigurationError("nu support must satisfy lo < hi")
    d1 = _density_1d(prob["nu"].get("density"))
    nu = Measure1D.uniform(lo, hi) if d1 is None else Measure1D.from_density(d1, lo, hi)

    from .applications import Preset
    return Preset(name="custom", surplus=s, mu=mu, nu=nu,
                  config=build_solver_config(cfg))
