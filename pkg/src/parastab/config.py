"""Experiment configuration: JSON schema, validation, spec construction.

Configs are plain JSON with fixed blocks (model, grid, control, cost,
horizon, solver, initial_state, experiment, seed).  Unknown keys are
rejected, every physical parameter is range-checked, and desk-scale caps
refuse runs that would not fit an interactive session unless
PARASTAB_CAP_OVERRIDE=1 is set.
"""

import json
import math
import os

import jsonschema
import numpy as np

from .errors import CapExceededError, ConfigError
from .mesh import Field, SpatialMesh, h1_norm_values
from .model import (AdmissibleSet, ControlOperator, Nonlinearity,
                    ProblemSpec)

NODE_CAP = 200000
STEP_CAP = 100000

_SUPPORT_1D = {
    "type": "array", "items": {"type": "number"},
    "minItems": 2, "maxItems": 2,
}
_SUPPORT_2D = {
    "type": "array", "items": _SUPPORT_1D,
    "minItems": 2, "maxItems": 2,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "grid", "control", "cost", "horizon", "solver",
                 "initial_state", "experiment", "seed"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variant"],
            "properties": {
                "variant": {"enum": ["schlogl", "quartic", "custom_square",
                                     "custom_c2"]},
                "a": {"type": "number"},
                "xi1": {"type": "number"},
                "xi2": {"type": "number"},
                "k": {"type": "number"},
                "preset": {"enum": ["square"]},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dimension", "n", "bc"],
            "properties": {
                "dimension": {"enum": [1, 2]},
                "n": {"type": "integer", "minimum": 2},
                "bc": {"enum": ["neumann", "dirichlet"]},
                "length": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "control": {
            "type": "object",
            "additionalProperties": False,
            "required": ["m", "supports", "eta"],
            "properties": {
                "m": {"type": "integer", "minimum": 1},
                "supports": {"type": "array", "minItems": 1,
                             "items": {"anyOf": [_SUPPORT_1D, _SUPPORT_2D]}},
                "eta": {"anyOf": [{"type": "number"}, {"const": "inf"}]},
                "shape": {"enum": ["indicator", "bump"]},
            },
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "required": ["alpha"],
            "properties": {"alpha": {"type": "number",
                                     "exclusiveMinimum": 0}},
        },
        "horizon": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T", "dt"],
            "properties": {
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "tail_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "warm_start": {"enum": ["riccati", "zero"]},
                "scheme": {"enum": ["cn", "ie"]},
                "operator_shift": {"type": "number"},
                "riccati_cap": {"type": "integer", "minimum": 2},
            },
        },
        "initial_state": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cosine", "constant", "gauss_bump",
                                  "nodes"]},
                "amplitude": {"type": "number"},
                "offset": {"type": "number"},
                "value": {"type": "number"},
                "center": {"type": "number"},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "values": {"type": "array", "items": {"type": "number"}},
                "normalize_h1": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tag"],
            "properties": {
                "tag": {"type": "string", "minLength": 1,
                        "pattern": "^[A-Za-z0-9_.-]+$"},
                "eps": {"type": "array", "minItems": 1,
                        "items": {"type": "number", "exclusiveMinimum": 0}},
                "directions": {"anyOf": [
                    {"type": "integer", "minimum": 1},
                    {"type": "array", "minItems": 1,
                     "items": {"type": "array",
                               "items": {"type": "number"}}},
                ]},
                "states": {"type": "integer", "minimum": 1},
                "pairs": {"type": "integer", "minimum": 1},
                "krylov_dim": {"type": "integer", "minimum": 2},
                "resolve_every": {"type": "integer", "minimum": 1},
                "restarts": {"type": "integer", "minimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


class ExperimentConfig:
    """Validated configuration; wraps the raw dict it was parsed from."""

    def __init__(self, data):
        self.data = data

    def to_dict(self):
        return json.loads(json.dumps(self.data))

    @property
    def tag(self):
        return self.data["experiment"]["tag"]

    @property
    def seed(self):
        return int(self.data["seed"])

    def experiment_params(self):
        params = dict(self.data["experiment"])
        params.pop("tag")
        return params


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def _require(cond, message, pointer):
    if not cond:
        raise ConfigError(message, pointer=pointer)


def validate_config(data, cap_override=None):
    """Schema plus semantic validation; returns an ExperimentConfig.

    ``cap_override`` defaults to the PARASTAB_CAP_OVERRIDE environment
    variable; desk-scale caps refuse oversized runs otherwise.
    """
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, pointer=_pointer(e.path))

    model = data["model"]
    variant = model["variant"]
    allowed = {"schlogl": {"variant", "a", "xi1", "xi2"},
               "quartic": {"variant", "k"},
               "custom_square": {"variant"},
               "custom_c2": {"variant", "preset"}}[variant]
    for key in model:
        _require(key in allowed,
                 "field not used by variant %r" % variant,
                 "/model/%s" % key)
    if variant == "schlogl":
        for key in ("a", "xi1", "xi2"):
            _require(key in model, "missing %r for schlogl" % key, "/model")
        _require(model["a"] < 0, "cubic coefficient a must be negative",
                 "/model/a")
    if variant == "quartic":
        _require("k" in model, "missing 'k' for quartic", "/model")
    if variant == "custom_c2":
        _require("preset" in model, "missing 'preset' for custom_c2",
                 "/model")

    grid = data["grid"]
    dim = grid["dimension"]
    nodes = grid["n"] ** dim
    length = grid.get("length", 1.0)

    control = data["control"]
    supports = control["supports"]
    _require(control["m"] == len(supports),
             "m=%d but %d supports given" % (control["m"], len(supports)),
             "/control/m")
    for i, s in enumerate(supports):
        boxes = [s] if dim == 1 else s
        if dim == 2:
            _require(len(s) == 2 and all(
                isinstance(b, list) and len(b) == 2 and
                all(isinstance(v, (int, float)) for v in b) for b in s),
                "2d support must be [[lox,hix],[loy,hiy]]",
                "/control/supports/%d" % i)
        for b in (boxes if dim == 2 else [s]):
            lo, hi = b
            _require(0.0 <= lo < hi <= length,
                     "support [%g, %g] must satisfy 0 <= lo < hi <= %g"
                     % (lo, hi, length), "/control/supports/%d" % i)
    eta = control["eta"]
    if eta != "inf":
        _require(eta > 0, "admissible radius must be positive",
                 "/control/eta")

    horizon = data["horizon"]
    T, dt = horizon["T"], horizon["dt"]
    steps = T / dt
    _require(abs(steps - round(steps)) <= 1e-9 * max(steps, 1.0),
             "horizon.T=%g is not an integer multiple of horizon.dt=%g"
             % (T, dt), "/horizon/dt")
    steps = int(round(steps))

    init = data["initial_state"]
    kind = init["kind"]
    needed = {"cosine": {"amplitude"}, "constant": {"value"},
              "gauss_bump": {"amplitude", "center", "width"},
              "nodes": {"values"}}[kind]
    for key in needed:
        _require(key in init, "missing %r for kind %r" % (key, kind),
                 "/initial_state")
    extra = {"kind", "normalize_h1"} | needed | \
        ({"offset"} if kind in ("cosine", "gauss_bump") else set())
    for key in init:
        _require(key in extra, "field not used by kind %r" % kind,
                 "/initial_state/%s" % key)
    if kind == "nodes":
        _require(len(init["values"]) == nodes,
                 "need %d nodal values, got %d"
                 % (nodes, len(init["values"])), "/initial_state/values")

    directions = data["experiment"].get("directions")
    if isinstance(directions, list):
        for i, v in enumerate(directions):
            _require(len(v) == nodes,
                     "direction needs %d nodal values, got %d"
                     % (nodes, len(v)), "/experiment/directions/%d" % i)
            _require(any(x != 0.0 for x in v),
                     "zero direction forbidden",
                     "/experiment/directions/%d" % i)

    for blk, key in (("model", "a"), ("model", "xi1"), ("model", "xi2"),
                     ("model", "k"), ("cost", "alpha"), ("horizon", "T"),
                     ("horizon", "dt")):
        if key in data.get(blk, {}):
            _require(math.isfinite(data[blk][key]),
                     "value must be finite", "/%s/%s" % (blk, key))

    if cap_override is None:
        cap_override = os.environ.get("PARASTAB_CAP_OVERRIDE") == "1"
    if not cap_override:
        if nodes >= NODE_CAP:
            raise CapExceededError(
                "%d nodes exceeds the desk-scale cap %d "
                "(set PARASTAB_CAP_OVERRIDE=1 to force)" % (nodes, NODE_CAP))
        if steps >= STEP_CAP:
            raise CapExceededError(
                "%d steps exceeds the desk-scale cap %d "
                "(set PARASTAB_CAP_OVERRIDE=1 to force)" % (steps, STEP_CAP))
    return ExperimentConfig(data)


def load_config(path, cap_override=None):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("invalid JSON: %s" % exc, pointer="")
    return validate_config(data, cap_override=cap_override)


def derived_sizes(cfg):
    """Node/step counts and a memory estimate for `validate` output."""
    grid = cfg.data["grid"]
    nodes = grid["n"] ** grid["dimension"]
    steps = int(round(cfg.data["horizon"]["T"] / cfg.data["horizon"]["dt"]))
    state_mb = (steps + 1) * nodes * 8 / 2 ** 20
    return {"node_count": nodes, "step_count": steps,
            "state_array_mb": round(state_mb, 2),
            "solver_working_set_mb": round(4 * state_mb, 2)}


def _build_nonlinearity(model):
    variant = model["variant"]
    if variant == "schlogl":
        return Nonlinearity.schlogl(model["a"], model["xi1"], model["xi2"])
    if variant == "quartic":
        return Nonlinearity.quartic(model["k"])
    if variant == "custom_square":
        return Nonlinearity.custom_square()
    return Nonlinearity.custom_c2(lambda y: y * y, lambda y: 2.0 * y,
                                  lambda y: 2.0 + 0.0 * y, 0.0)


def _build_y0(init, mesh):
    coords = mesh.coords()
    if mesh.dimension == 1:
        coords = coords.reshape(-1)
    kind = init["kind"]
    if kind == "cosine":
        amp = init["amplitude"]
        off = init.get("offset", 0.0)
        vals = np.full(mesh.node_count, off, dtype=float)
        prof = np.ones(mesh.node_count)
        for axis in range(mesh.dimension):
            x = coords[:, axis] if mesh.dimension > 1 else coords
            prof = prof * np.cos(np.pi * x / mesh.length)
        vals += amp * prof
    elif kind == "constant":
        vals = np.full(mesh.node_count, init["value"], dtype=float)
    elif kind == "gauss_bump":
        amp = init["amplitude"]
        off = init.get("offset", 0.0)
        c, wd = init["center"], init["width"]
        if mesh.dimension == 1:
            r2 = (coords - c) ** 2
        else:
            r2 = ((coords - c) ** 2).sum(axis=1)
        vals = off + amp * np.exp(-r2 / (2.0 * wd * wd))
    else:
        vals = np.asarray(init["values"], dtype=float)
    if "normalize_h1" in init:
        nrm = h1_norm_values(vals, mesh)
        if nrm > 0:
            vals = vals * (init["normalize_h1"] / nrm)
    return Field(vals, mesh)


def build_spec(cfg):
    """ProblemSpec for a validated configuration."""
    data = cfg.data
    grid = data["grid"]
    mesh = SpatialMesh(grid["dimension"], grid["n"], bc=grid["bc"],
                       length=grid.get("length", 1.0))
    nl = _build_nonlinearity(data["model"])
    control = data["control"]
    supports = [tuple(s) if grid["dimension"] == 1
                else tuple(tuple(b) for b in s)
                for s in control["supports"]]
    B = ControlOperator.from_supports(mesh, supports,
                                      shape=control.get("shape", "indicator"))
    eta = control["eta"]
    admissible = AdmissibleSet(math.inf if eta == "inf" else float(eta))
    solver = data.get("solver", {})
    kwargs = {}
    if "operator_shift" in solver:
        kwargs["operator_shift"] = solver["operator_shift"]
    if "riccati_cap" in solver:
        kwargs["riccati_cap"] = solver["riccati_cap"]
    return ProblemSpec(
        mesh=mesh, nonlinearity=nl, control=B, admissible=admissible,
        y0=_build_y0(data["initial_state"], mesh),
        alpha=data["cost"]["alpha"],
        horizon=data["horizon"]["T"], dt=data["horizon"]["dt"],
        tail_tol=data["horizon"].get("tail_tol", 1e-3),
        tol=solver.get("tol", 1e-8),
        max_iter=solver.get("max_iter", 500),
        warm_start=solver.get("warm_start", "riccati"),
        scheme=solver.get("scheme", "cn"),
        seed=cfg.seed, **kwargs)
