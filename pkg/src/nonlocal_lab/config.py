"""Experiment configuration: JSON schema, defaults and object builders.

A config is one JSON document. Missing blocks and keys fall back to the
defaults of the command being run, so ``{}`` is a valid config.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from json.decoder import scanstring

import jsonschema
import numpy as np

from .kernel import DiffusionTensor, KernelSpec, OrderField
from .mesh import Mesh, build_box_mesh, build_interval_mesh
from .quadrature import QuadratureOptions
from .solver import TimeGrid

COMMANDS = ("verify-calculus", "audit-spaces", "solve", "carleman-certify", "backward",
            "inverse-source")

_pos = {"type": "number", "exclusiveMinimum": 0}
_order01 = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nonlocal-lab experiment config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "deterministic": {"type": "boolean"},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"enum": [1, 2]},
                "a": {"type": "number"},
                "b": {"type": "number"},
                "elements": {"type": "integer", "minimum": 2},
                "lx": _pos, "ly": _pos,
                "nx": _count, "ny": _count,
                "collar": {"anyOf": [_pos, {"type": "null"}]},
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "order": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["preset"],
                    "properties": {
                        "preset": {"enum": ["constant", "sine", "bump"]},
                        "beta": _order01,
                        "beta_lo": _order01,
                        "beta_hi": _order01,
                        "frequency": {"type": "number"},
                        "center": {"type": "number"},
                        "width": _pos,
                    },
                },
                "tensor": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["preset"],
                    "properties": {
                        "preset": {"enum": ["identity", "scaled_identity", "time_periodic"]},
                        "c": {"type": "number"},
                        "omega": {"type": "number"},
                    },
                },
                "horizon": _pos,
                "symmetrize": {"type": "boolean"},
            },
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "order": {"type": "integer", "minimum": 1, "maximum": 20},
                "levels": {"type": "integer", "minimum": 0, "maximum": 60},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"T": _pos, "steps": _count},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["dirichlet", "neumann"]},
                "scheme": {"enum": ["implicit_euler", "crank_nicolson"]},
                "initial": {"enum": ["random", "bump", "sine"]},
                "source": {"enum": ["zero", "bump"]},
            },
        },
        "experiment": {"type": "object"},
    },
}

_EXPERIMENT_SCHEMAS = {
    "verify-calculus": {
        "type": "object", "additionalProperties": False,
        "properties": {"fields": _count, "tolerance": _pos},
    },
    "audit-spaces": {
        "type": "object", "additionalProperties": False,
        "properties": {"samples": {"type": "integer", "minimum": 10},
                       "levels": {"type": "array", "items": {"type": "integer", "minimum": 2},
                                  "minItems": 2},
                       "drift_tolerance": _pos},
    },
    "solve": {"type": "object", "additionalProperties": False, "properties": {}},
    "carleman-certify": {
        "type": "object", "additionalProperties": False,
        "properties": {"members": _count,
                       "variant": {"enum": ["forward", "terminal"]},
                       "lambda_grid": {"type": "array", "items": _pos, "minItems": 1},
                       "s_grid": {"type": "array", "items": _pos, "minItems": 2},
                       "stable_lambdas": {"type": "array", "items": _pos},
                       "stability_factor": {"type": "number", "minimum": 1}},
    },
    "backward": {
        "type": "object", "additionalProperties": False,
        "properties": {"rhos": {"type": "array", "items": _pos, "minItems": 1},
                       "noise": {"type": "number", "minimum": 0},
                       "family": {"type": "integer", "minimum": 2},
                       "mu_T_min": _pos,
                       "theta_tolerance": _pos},
    },
    "inverse-source": {
        "type": "object", "additionalProperties": False,
        "properties": {"space_modes": _count, "time_modes": _count, "noise": {"type": "number", "minimum": 0},
                       "tolerance": _pos},
    },
}

_BASE = {
    "seed": 0,
    "output_dir": "runs",
    "deterministic": True,
    "mesh": {"dim": 1, "a": 0.0, "b": 1.0, "elements": 16, "collar": None},
    "kernel": {"order": {"preset": "constant", "beta": 0.4},
               "tensor": {"preset": "identity"}, "horizon": 0.25, "symmetrize": True},
    "quadrature": {},
    "grid": {"T": 0.5, "steps": 20},
    "solver": {"kind": "dirichlet", "scheme": "implicit_euler", "initial": "random",
               "source": "zero"},
}

DEFAULTS = {
    "verify-calculus": {"mesh": {"elements": 8},
                        "experiment": {"fields": 20, "tolerance": 1e-6}},
    "audit-spaces": {"kernel": {"order": {"preset": "sine", "beta_lo": 0.3, "beta_hi": 0.6}},
                     "experiment": {"samples": 100, "levels": [16, 32], "drift_tolerance": 0.1}},
    "solve": {"experiment": {}},
    "carleman-certify": {"grid": {"T": 0.4, "steps": 40},
                         "experiment": {"members": 10, "variant": "forward",
                                        "lambda_grid": [2, 4, 8], "s_grid": [1, 2, 4, 8],
                                        "stable_lambdas": [4, 8], "stability_factor": 2.0}},
    "backward": {"mesh": {"elements": 64}, "grid": {"T": 0.2, "steps": 40},
                 "solver": {"scheme": "crank_nicolson"},
                 "experiment": {"rhos": [1e-2, 1e-4, 1e-6], "noise": 0.0, "family": 8,
                                "mu_T_min": 5.0, "theta_tolerance": 0.05}},
    "inverse-source": {"mesh": {"dim": 2, "lx": 0.5, "ly": 1.0, "nx": 4, "ny": 8, "collar": 0.125},
                       "kernel": {"horizon": 2.0},
                       "grid": {"T": 0.5, "steps": 8},
                       "solver": {"kind": "neumann"},
                       "experiment": {"space_modes": 8, "time_modes": 4, "noise": 0.01,
                                      "tolerance": 1e-6}},
}


class ConfigError(ValueError):
    """Invalid config; ``line`` is the 1-based line in the source text, if known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            # a new preset replaces the whole block instead of mixing keys
            if "preset" in v and v.get("preset") != out[k].get("preset"):
                out[k] = copy.deepcopy(v)
            else:
                out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positions(text: str) -> dict:
    """Map JSON paths (tuples of keys / indices) to 1-based line numbers."""
    out = {}
    dec = json.JSONDecoder()
    n = len(text)

    def ws(i):
        while i < n and text[i] in " \t\r\n":
            i += 1
        return i

    def line(i):
        return text.count("\n", 0, i) + 1

    def value(i, path):
        i = ws(i)
        out[path] = line(i)
        c = text[i]
        if c == "{":
            i = ws(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = ws(i)
                key, i = scanstring(text, i + 1)
                out[path + (key,)] = line(i)
                i = ws(i)
                i = value(i + 1, path + (key,))
                i = ws(i)
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if c == "[":
            i = ws(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = value(i, path + (k,))
                i = ws(i)
                k += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        _, j = dec.raw_decode(text, i)
        return j

    value(0, ())
    return out


def _line_for(pos: dict, path) -> int | None:
    path = tuple(path)
    while path and path not in pos:
        path = path[:-1]
    return pos.get(path)


def _order_bounds(o: dict):
    if o["preset"] == "constant":
        b = o.get("beta", 0.4)
        return b, b
    if o["preset"] in ("sine", "bump"):
        return o.get("beta_lo", 0.3), o.get("beta_hi", 0.6)
    raise ConfigError(f"unknown order preset {o['preset']!r}")


def parse_config(text: str, command: str) -> dict:
    """Parse, validate and merge with the command defaults.

    Raises
    ------
    ConfigError
        With the line of the offending entry.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", e.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", 1)
    pos = _positions(text)
    schema = copy.deepcopy(SCHEMA)
    schema["properties"]["experiment"] = _EXPERIMENT_SCHEMAS[command]
    errs = sorted(jsonschema.Draft202012Validator(schema).iter_errors(raw),
                  key=lambda e: (_line_for(pos, e.absolute_path) or 0, list(e.absolute_path)))
    if errs:
        e = errs[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        msg = f"{where}: {e.message}"
        if any(p in ("beta", "beta_lo", "beta_hi") for p in e.absolute_path):
            msg += " (order bounds must satisfy 0 < beta_* <= beta^* < 1)"
        raise ConfigError(msg, _line_for(pos, e.absolute_path))
    cfg = _merge(_merge(_BASE, DEFAULTS[command]), raw)
    order = cfg["kernel"]["order"]
    lo, hi = _order_bounds(order)
    if not (0 < lo <= hi < 1):
        raise ConfigError(f"kernel/order: beta_* = {lo}, beta^* = {hi} violate "
                          f"0 < beta_* <= beta^* < 1",
                          _line_for(pos, ("kernel", "order", "beta_hi")))
    t = cfg["kernel"]["tensor"]
    if t["preset"] == "time_periodic" and not abs(t.get("c", 0.5)) < 1:
        raise ConfigError("kernel/tensor: time_periodic needs |c| < 1",
                          _line_for(pos, ("kernel", "tensor", "c")))
    if t["preset"] == "scaled_identity" and not t.get("c", 1.0) > 0:
        raise ConfigError("kernel/tensor: scaled_identity needs c > 0",
                          _line_for(pos, ("kernel", "tensor", "c")))
    m = cfg["mesh"]
    if m["dim"] == 1 and not m["b"] > m["a"]:
        raise ConfigError("mesh: need a < b", _line_for(pos, ("mesh", "b")))
    if command == "inverse-source" and m["dim"] != 2:
        raise ConfigError("inverse-source runs on a 2-D mesh", _line_for(pos, ("mesh", "dim")))
    if command == "backward" and cfg["solver"]["kind"] != "dirichlet":
        raise ConfigError("backward needs the Dirichlet constraint",
                          _line_for(pos, ("solver", "kind")))
    if command == "inverse-source" and cfg["solver"]["kind"] != "neumann":
        raise ConfigError("inverse-source needs the Neumann constraint",
                          _line_for(pos, ("solver", "kind")))
    return cfg


def default_config(command: str) -> dict:
    return _merge(_merge(_BASE, DEFAULTS[command]), {})


# ---------------------------------------------------------------------------
# builders


@dataclass
class Setup:
    mesh: Mesh
    spec: KernelSpec
    opts: QuadratureOptions | None
    grid: TimeGrid


def build_order(o: dict, dim: int, domain_length: float) -> OrderField:
    p = o["preset"]
    if p == "constant":
        return OrderField.constant(o.get("beta", 0.4))
    lo, hi = _order_bounds(o)
    if p == "sine":
        return OrderField.sine(0.5 * (lo + hi), 0.5 * (hi - lo),
                               o.get("frequency", np.pi / domain_length))
    return OrderField.bump(lo, hi - lo, o.get("center", 0.5 * domain_length),
                           o.get("width", 0.2 * domain_length))


def build_tensor(t: dict, dim: int) -> DiffusionTensor:
    p = t["preset"]
    if p == "identity":
        return DiffusionTensor.identity(dim)
    if p == "scaled_identity":
        return DiffusionTensor.scaled_identity(t.get("c", 1.0), dim)
    return DiffusionTensor.time_periodic(t.get("c", 0.5), t.get("omega", 2 * np.pi), dim)


def build_setup(cfg: dict, fast: bool = False) -> Setup:
    m = cfg["mesh"]
    k = cfg["kernel"]
    eps = k["horizon"]
    if m["dim"] == 1:
        mesh = build_interval_mesh(m["a"], m["b"], m["elements"], eps, m.get("collar"))
        length = m["b"] - m["a"]
    else:
        mesh = build_box_mesh(m.get("lx", 1.0), m.get("ly", 1.0), m.get("nx", 4), m.get("ny", 4),
                              eps, m.get("collar"))
        length = m.get("lx", 1.0)
    spec = KernelSpec(build_order(k["order"], m["dim"], length), build_tensor(k["tensor"], m["dim"]),
                      eps, dim=m["dim"], symmetrize=k["symmetrize"])
    q = dict(cfg.get("quadrature", {}))
    if fast:
        q.setdefault("order", 4 if m["dim"] == 1 else 2)
        q.setdefault("levels", 3)
    opts = QuadratureOptions(**q) if q else None
    g = cfg["grid"]
    return Setup(mesh, spec, opts, TimeGrid(g["T"], g["steps"]))
