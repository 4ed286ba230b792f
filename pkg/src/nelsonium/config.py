"""Experiment configuration: TOML files validated against a closed schema."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("evolve", "fields", "marginals", "sample", "entropy", "hierarchy", "converge")
STOCHASTIC = ("sample", "entropy", "converge")


class ConfigError(ValueError):
    pass


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}

SCHEMA = _obj(
    {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "grid": _obj({"box_length": _POS, "points_per_axis": _INT1}, ["box_length", "points_per_axis"]),
        "potential": _obj(
            {
                "kind": {"enum": ["gaussian_bump", "cosine_bounded", "quadratic_oracle", "constant"]},
                "amplitude": _NUM,
                "width": _POS,
            },
            ["kind", "amplitude"],
        ),
        "model": _obj(
            {
                "mode": {"enum": ["linear_nbody", "hartree"]},
                "n_particles": _INT1,
                "trap_omega": _NONNEG,
            },
            ["mode", "n_particles"],
        ),
        "initial": _obj(
            {
                "kind": {"enum": ["gaussian", "entangled", "oracle"]},
                "sigma": _POS,
                "center": _NUM,
                "momentum": _NUM,
                "chirp": _NUM,
                "correlation": _NONNEG,
            },
            ["kind"],
        ),
        "time": _obj({"dt": _POS, "T": _POS, "sample_every": _INT1}, ["dt", "T"]),
        "sampling": _obj(
            {"K": _INT1, "dt": _POS, "record_every": _INT1, "n": _INT1, "block_size": _INT1, "times": {"type": "array", "items": _NONNEG}},
            ["K"],
        ),
        "hierarchy": _obj({"n": _INT1, "infinite": {"type": "boolean"}}),
        "entropy": _obj({"convention": {"enum": ["half_girsanov", "paper_literal"]}, "pathwise": {"type": "boolean"}}),
        "converge": _obj(
            {
                "N_sweep": {"type": "array", "items": _INT1, "minItems": 3},
                "trap_omega": _NONNEG,
                "coupling_g": _NONNEG,
                "t": _NONNEG,
                "variance": _POS,
                "path_N": {"type": "array", "items": _INT1},
                "K": _INT1,
                "dt": _POS,
                "T": _POS,
            },
            ["N_sweep", "coupling_g", "t"],
        ),
        "tolerances": {"type": "object", "additionalProperties": _NONNEG},
    },
    ["experiment"],
)

DEFAULTS = {
    "output_dir": "nelsonium-out",
    "potential": {"kind": "constant", "amplitude": 0.0, "width": 1.0},
    "model": {"mode": "linear_nbody", "n_particles": 1, "trap_omega": 0.0},
    "initial": {"kind": "gaussian", "sigma": 1.0, "center": 0.0, "momentum": 0.0, "chirp": 0.0, "correlation": 0.0},
    "time": {"sample_every": 10},
    "sampling": {"record_every": 250, "n": 1, "block_size": 8192},
    "hierarchy": {"n": 1, "infinite": False},
    "entropy": {"convention": "half_girsanov", "pathwise": True},
    "converge": {"trap_omega": 1.0, "variance": 0.5, "path_N": [], "K": 20000, "dt": 1e-3, "T": 1.0},
    "tolerances": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(raw: dict, seed: int | None = None) -> dict:
    """Validate a raw config mapping and fill defaults.

    ``seed`` (from the command line) overrides the file.  Stochastic
    experiments without a seed are rejected.
    """
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["experiment"] in STOCHASTIC and "seed" not in cfg:
        if not (cfg["experiment"] == "entropy" and not cfg["entropy"]["pathwise"]):
            raise ConfigError(f"experiment {cfg['experiment']!r} is stochastic: a seed is mandatory")
    if cfg["experiment"] != "converge":
        for key in ("grid", "time"):
            if key not in raw:
                raise ConfigError(f"missing [{key}] table")
    if cfg["experiment"] in ("sample",) and "sampling" not in raw:
        raise ConfigError("missing [sampling] table")
    if cfg["experiment"] == "converge" and "converge" not in raw:
        raise ConfigError("missing [converge] table")
    return cfg


def load(path, seed: int | None = None) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return validate(raw, seed)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_output(cfg: dict, out: str | None) -> Path:
    return Path(out if out is not None else cfg["output_dir"])
