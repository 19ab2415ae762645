"""Experiment configuration: one TOML schema for every subcommand.

Layout::

    seed = 7                      # optional here; --seed on the command line wins

    [drift]                       # shared by all subcommands that need a drift
    f0 = "poly:[0]"
    jumps = [[0.0, 1.0]]

    [sample-gibbs]                # parameters of one subcommand, defaults below
    level = 8
    M = 100000

Unknown tables or keys are rejected. Validation errors carry the line of
the offending key when it can be located in the text.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .drift import DriftError, JumpDrift
from .rng import check_seed


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


POS = "positive"
NONNEG = "nonnegative"

# name -> (type, default, constraint)
SCHEMA: dict[str, dict[str, tuple]] = {
    "sample-gibbs": {
        "target": (str, "pi_n", ("pi_n", "nu")),
        "level": (int, 8, NONNEG),
        "mesh": (int, None, NONNEG),
        "rule": (str, "exact", ("exact", "trapezoid")),
        "M": (int, 100_000, POS),
        "task_size": (int, 20_000, POS),
        "frames": (int, 0, NONNEG),
        "z_target": (float, None, None),
        "z_tol": (float, 0.005, POS),
    },
    "spectral": {
        "N": (int, 60, NONNEG),
        "t": (list, [0.05, 0.1, 0.5], POS),
        "K": (int, 8, POS),
        "trunc": (int, 400, NONNEG),
        "divergence_N": (int, 400, POS),
        "checkpoints": (list, [100, 200, 400], POS),
        "rel_tol": (float, 1e-6, POS),
        "gap_ratio_min": (float, 0.9, None),
    },
    "ibp": {
        "route": (str, "continuum", ("continuum", "discrete")),
        "level": (int, 7, NONNEG),
        "M": (int, 100_000, POS),
        "modes": (list, [1, 2], POS),
        "phi": (list, ["one", "linear", "cos"], None),
        "k_sigma": (float, 3.0, POS),
    },
    "skew-sim": {
        "mode": (str, "walk", ("walk", "system")),
        "beta": (list, [0.0, 0.5, 1.0], None),
        "paths": (int, 100_000, POS),
        "tol": (float, 0.01, POS),
        "level": (int, 2, NONNEG),
        "dt": (float, 1e-4, POS),
        "T": (float, 1.0, POS),
        "M": (int, 2000, POS),
        "stride": (int, 0, NONNEG),
        "p_min": (float, 0.01, None),
    },
    "spde-sim": {
        "mesh": (int, 6, POS),
        "dt": (float, 1e-4, POS),
        "T": (float, 1.0, POS),
        "M": (int, 1000, POS),
        "stride": (int, 0, NONNEG),
        "u0": (str, "zero", ("zero", "gibbs")),
        "mollifier": (int, 8, POS),
        "residual_mode": (int, 0, NONNEG),
        "eps": (float, 0.05, NONNEG),
        "slab_csv": (bool, False, None),
    },
    "stationarity": {
        "mesh": (int, 6, POS),
        "dt": (float, 1e-4, POS),
        "T": (float, 0.25, POS),
        "M": (int, 2000, POS),
        "mollifier": (int, 8, POS),
        "shift": (bool, True, None),
        "p_min": (float, 0.01, None),
    },
    "convergence": {
        "levels": (list, [2, 4, 6], NONNEG),
        "functionals": (list, ["posocc"], None),
        "M": (int, 2000, POS),
        "reference_mesh": (int, 10, POS),
        "reference_M": (int, 20_000, POS),
        "spde": (bool, True, None),
        "bootstrap": (int, 200, POS),
    },
    "holder": {
        "mesh": (int, 6, POS),
        "dt": (float, 2.0**-14, POS),
        "T": (float, 0.125, POS),
        "M": (int, 300, POS),
        "stride": (int, 4, POS),
        "theta": (float, 0.1, POS),
        "p": (float, 12.0, POS),
        "lags": (list, [2.0**-k for k in range(8, 3, -1)], POS),
        "norm": (str, "holder", ("holder", "hm1")),
    },
}

SUBCOMMANDS = tuple(SCHEMA)


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int
    drift: JumpDrift
    params: dict[str, Any]
    out: str = "."
    workers: int = 1
    raw: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        return self.params[key]

    def to_json(self) -> dict:
        return {"subcommand": self.subcommand, "seed": self.seed,
                "drift": self.drift.to_config(), "params": self.params}


def _line_of(text: str, key: str, table: str | None = None) -> int | None:
    pat = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=")
    in_table = table is None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("["):
            in_table = table is not None and s.strip("[] ") == table
            continue
        if in_table and pat.match(line):
            return i
    if table is not None:
        for i, line in enumerate(text.splitlines(), 1):
            if line.strip().strip("[] ") == table and line.strip().startswith("["):
                return i
    return None


def _coerce(name, value, typ, constraint, text, table):
    line = _line_of(text, name, table)
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"{table}.{name} must be {typ.__name__}, got {value!r}", line)
    items = value if typ is list else [value]
    if isinstance(constraint, tuple):
        bad = [v for v in items if v not in constraint]
        if bad:
            raise ConfigError(f"{table}.{name} must be one of {list(constraint)}, got {bad[0]!r}", line)
    elif constraint in (POS, NONNEG):
        for v in items:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"{table}.{name} must be numeric, got {v!r}", line)
            if (constraint == POS and v <= 0) or (constraint == NONNEG and v < 0):
                raise ConfigError(f"{table}.{name} must be {constraint}, got {v!r}", line)
    return value


def parse_config(text: str, subcommand: str, seed: int | None = None, out: str = ".",
                 workers: int = 1) -> ExperimentConfig:
    """Validate ``text`` for ``subcommand``; a seed in the arguments overrides the file."""
    if subcommand not in SCHEMA:
        raise ConfigError(f"unknown subcommand {subcommand!r}; expected one of {list(SCHEMA)}")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    allowed = {"seed", "drift", *SCHEMA}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown top-level key {key!r}", _line_of(text, key) or _line_of(text, "", key))
    if seed is None:
        seed = raw.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    try:
        seed = check_seed(seed)
    except ValueError as exc:
        raise ConfigError(str(exc), _line_of(text, "seed")) from None

    try:
        drift = JumpDrift.from_config(raw.get("drift", {}))
    except (DriftError, TypeError) as exc:
        raise ConfigError(f"drift: {exc}", _line_of(text, "jumps", "drift") or _line_of(text, "", "drift")) from None

    table = raw.get(subcommand, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{subcommand}] must be a table", _line_of(text, subcommand))
    schema = SCHEMA[subcommand]
    params = {}
    for key, value in table.items():
        if key not in schema:
            raise ConfigError(f"unknown key {subcommand}.{key}", _line_of(text, key, subcommand))
    for key, (typ, default, constraint) in schema.items():
        if key in table:
            params[key] = _coerce(key, table[key], typ, constraint, text, subcommand)
        else:
            params[key] = default
    if subcommand == "convergence":
        lv = params["levels"]
        if len(lv) < 2:
            raise ConfigError("convergence needs at least two levels", _line_of(text, "levels", subcommand))
        if len(set(lv)) != len(lv) or any(int(v) != v for v in lv):
            raise ConfigError("levels must be distinct integers", _line_of(text, "levels", subcommand))
    if subcommand == "sample-gibbs" and params["target"] == "nu" and params["mesh"] is None:
        raise ConfigError("target 'nu' needs a mesh", _line_of(text, "target", subcommand))
    if subcommand == "holder" and len(params["lags"]) < 3:
        raise ConfigError("holder needs at least three lags", _line_of(text, "lags", subcommand))
    if subcommand == "ibp":
        bad = [p for p in params["phi"] if p not in ("one", "linear", "cos", "sin")]
        if bad:
            raise ConfigError(f"unknown cylinder kind {bad[0]!r}", _line_of(text, "phi", subcommand))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return ExperimentConfig(subcommand, seed, drift, params, out, workers, raw)
