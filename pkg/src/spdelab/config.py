"""Experiment configuration: a YAML key tree validated against a JSON schema.

Example::

    seed: 7
    kernel: {family: riesz, d: 1, gamma: 0.5}
    grid: {N: 128, n_steps: 128, T: 1.0}
    model:
      m: 1
      q: 1
      sigma: {fn: sin, offset: 2.0}
      b: {fn: cos, scale: 0.5}
      h3: true
    verify: {t_grid: [0.25, 0.5, 1.0], paths: 20000}
"""

import copy

import jsonschema
import numpy as np
import yaml

from .covariance import KernelSpec
from .noise import GridSpec
from .solver import Model


class ConfigError(ValueError):
    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_int_nonneg = {"type": "integer", "minimum": 0}
_num_list = {"type": "array", "items": _num}
_point = {"oneOf": [_num, _num_list]}

_coefficient = {
    "oneOf": [
        _num,
        _num_list,
        {
            "type": "object",
            "properties": {"constant": {"oneOf": [_num, _num_list]}},
            "required": ["constant"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "fn": {"enum": ["identity", "sin", "cos", "tanh"]},
                "scale": _num, "slope": _num, "shift": _num, "offset": _num,
            },
            "required": ["fn"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "funcs": {"type": "array", "items": {"enum": ["identity", "sin", "cos", "tanh"]}},
                "A": {"type": "array"}, "W": {"type": "array"}, "c": _num_list, "a0": _num_list,
            },
            "required": ["funcs", "A", "W"],
            "additionalProperties": False,
        },
    ]
}

_probe = {
    "type": "object",
    "properties": {"t": _pos, "x": _point},
    "required": ["t"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "command": {"enum": ["kernel", "phi", "simulate", "verify"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": _int_pos,
        "output": {"type": "string"},
        "kernel": {
            "type": "object",
            "properties": {
                "family": {"enum": ["white", "riesz", "bessel", "fractional"]},
                "d": _int_pos, "gamma": _pos, "alpha": _pos,
                "hurst": {"type": "array", "items": _pos, "minItems": 1},
            },
            "required": ["family"],
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "properties": {"N": _int_pos, "n_steps": _int_pos, "T": _pos, "window": {"type": "number", "minimum": 0},
                           "L": _pos},
            "required": ["N", "n_steps", "T"],
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {"m": _int_pos, "q": _int_pos, "sigma": _coefficient, "b": _coefficient,
                           "h3": {"type": "boolean"}},
            "required": ["sigma", "b"],
            "additionalProperties": False,
        },
        "kernel_checks": {
            "type": "object",
            "properties": {"eta": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                               "exclusiveMaximum": 1}},
                           "normalization": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "phi": {
            "type": "object",
            "properties": {
                "t_grid": {"type": "array", "items": _pos},
                "method": {"enum": ["ClosedForm", "Quadrature"]},
                "h1": {"type": "boolean"},
                "h2": {"type": "object", "properties": {"gamma1": _pos, "gamma2": _pos},
                       "required": ["gamma1", "gamma2"], "additionalProperties": False},
                "two_sided": {"type": "object", "properties": {"eta": _pos, "T": _pos},
                              "required": ["eta", "T"], "additionalProperties": False},
            },
            "required": ["t_grid"],
            "additionalProperties": False,
        },
        "simulate": {
            "type": "object",
            "properties": {"paths": _int_nonneg, "probes": {"type": "array", "items": _probe},
                           "dump_terminal": {"type": "boolean"}},
            "required": ["paths"],
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {
                "t_grid": {"type": "array", "items": _pos},
                "x": _point,
                "paths": _int_nonneg,
                "bootstrap": _int_nonneg,
                "c1_min": _pos,
                "c3_max": _pos,
                "ellipticity": {"type": "object", "properties": {"sample": _int_pos},
                                "additionalProperties": False},
                "derivative": {"type": "object",
                               "properties": {"windows": {"type": "array", "items": _pos}, "paths": _int_pos,
                                              "max_spread": _pos},
                               "additionalProperties": False},
                "drift": {"type": "object", "properties": {"paths": _int_pos}, "additionalProperties": False},
                "holder": {"type": "object",
                           "properties": {"axis": {"enum": ["Time", "Space"]}, "lags": _num_list,
                                          "paths": _int_pos, "tolerance": _pos},
                           "required": ["axis", "lags"], "additionalProperties": False},
            },
            "additionalProperties": False,
        },
    },
    "required": ["kernel"],
    "additionalProperties": False,
}

DEFAULTS = {
    "seed": 0,
    "grid": {"N": 64, "n_steps": 64, "T": 1.0, "window": 0.0},
    "model": {"m": 1, "q": 1, "h3": False},
}


def validate(raw):
    """Schema check; raises ConfigError naming the offending key path."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a key tree (mapping) at the top level")
    validator = jsonschema.Draft7Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if err is not None:
        path = ".".join(str(p) for p in err.absolute_path)
        raise ConfigError(err.message, path or "<root>")
    return raw


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return validate(raw if raw is not None else {})


def resolve(raw):
    """Validated config with defaults filled in (the archived 'resolved' form)."""
    validate(raw)
    cfg = copy.deepcopy(raw)
    cfg.setdefault("seed", DEFAULTS["seed"])
    cfg["grid"] = {**DEFAULTS["grid"], **cfg.get("grid", {})}
    if "model" in cfg:
        cfg["model"] = {**DEFAULTS["model"], **cfg["model"]}
    kern = cfg["kernel"]
    if kern["family"] == "fractional":
        kern.setdefault("d", len(kern.get("hurst", [])))
    else:
        kern.setdefault("d", 1)
    return cfg


def build_kernel(cfg):
    try:
        return KernelSpec.from_dict(cfg["kernel"])
    except KeyError as exc:
        raise ConfigError(f"missing kernel parameter {exc.args[0]}", "kernel") from exc
    except ValueError as exc:
        raise ConfigError(str(exc), "kernel") from exc


def build_grid(cfg, d):
    g = cfg["grid"]
    try:
        if "L" in g:
            return GridSpec(d, g["N"], g["L"], g["T"] / g["n_steps"], g["n_steps"])
        return GridSpec.for_horizon(d, g["N"], g["T"], g["n_steps"], g.get("window", 0.0))
    except ValueError as exc:
        raise ConfigError(str(exc), "grid") from exc


def build_model(cfg, d):
    if "model" not in cfg:
        raise ConfigError("this command needs a model section", "model")
    mc = cfg["model"]
    try:
        return Model.from_specs(d, mc["m"], mc["q"], mc["sigma"], mc["b"], mc.get("h3", False))
    except ValueError as exc:
        raise ConfigError(str(exc), "model") from exc


def point(x, d):
    x = np.atleast_1d(np.asarray(0.0 if x is None else x, dtype=float))
    if x.size == 1 and d > 1:
        x = np.full(d, float(x[0]))
    if x.shape != (d,):
        raise ConfigError(f"point {x.tolist()} is not in R^{d}")
    return x
