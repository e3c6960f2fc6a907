"""
Experiment configuration records and shipped presets.

A config is a flat JSON object.  Grids are either explicit lists or
``{"kind": "linear" | "log" | "quadratic", "start": a, "stop": b, "num": n}``
(``quadratic`` places ``a + (b - a) (k / (n - 1))^2``, dense near ``a``).
Runtime knobs such as worker counts live outside the config so that they
never reach the output.
"""
from __future__ import annotations

import copy
import json
import os

import numpy as np

from .lattice import BoxGeometry
from .operators import BoundaryCondition, RestrictionScheme

SEED_ENV = "PERCLAP_SEED"

COMMANDS = ("ids", "walk", "spectrum", "mechanism", "verify")

_GEOMETRY_KEYS = {"d", "L", "topology", "p", "master_seed"}
ALLOWED_KEYS = {
    "ids": _GEOMETRY_KEYS | {"bc", "scheme", "energy_grid", "samples", "fit_window",
                             "output_path", "format", "preset"},
    "walk": _GEOMETRY_KEYS | {"t_grid", "samples", "walks", "start", "fit_window",
                              "output_path", "format", "preset"},
    "spectrum": _GEOMETRY_KEYS | {"bc", "scheme", "energy_grid", "output_path", "format",
                                  "preset"},
    "mechanism": _GEOMETRY_KEYS | {"check", "samples", "alpha", "side_list", "t_grid",
                                   "energy_grid", "delta", "t0", "output_path", "format",
                                   "preset"},
    "verify": {"suite", "master_seed", "output_path", "format"},
}

_ENERGY_DEFAULT = {"kind": "linear", "start": 0.0, "stop": None, "num": 81}

PRESETS: dict[str, dict] = {
    "subcritical-d2": {
        "d": 2, "L": 64, "topology": "free", "p": 0.3, "bc": "Dtilde",
        "scheme": "graph_restriction", "samples": 20,
        "energy_grid": {"kind": "log", "start": 0.05, "stop": 1.0, "num": 12},
        "t_grid": {"kind": "log", "start": 1.0, "stop": 16.0, "num": 9},
        "walks": 2000, "fit_window": [0.05, 1.0],
    },
    "supercritical-d2": {
        "d": 2, "L": 128, "topology": "periodic", "p": 0.7, "bc": "N",
        "scheme": "graph_restriction", "samples": 50,
        "energy_grid": [0.0] + np.geomspace(0.02, 0.2, 13).tolist(),
        "t_grid": {"kind": "log", "start": 8.0, "stop": 64.0, "num": 7},
        "walks": 10000, "fit_window": [0.02, 0.2],
    },
    "supercritical-d3": {
        "d": 3, "L": 24, "topology": "periodic", "p": 0.35, "bc": "N",
        "scheme": "graph_restriction", "samples": 10,
        "energy_grid": [0.0] + np.geomspace(0.05, 0.5, 9).tolist(),
        "t_grid": {"kind": "log", "start": 4.0, "stop": 16.0, "num": 5},
        "walks": 5000, "fit_window": [0.05, 0.5],
    },
    "fullLattice-d2": {
        "d": 2, "L": 32, "topology": "periodic", "p": 1.0, "bc": "N",
        "scheme": "graph_restriction", "samples": 1,
        "energy_grid": {"kind": "linear", "start": 0.0, "stop": 8.0, "num": 33},
        "t_grid": {"kind": "log", "start": 1.0, "stop": 16.0, "num": 9},
        "walks": 20000, "fit_window": [4.0, 16.0],
    },
}

# reference bond thresholds, for orientation only
CRITICAL_P = {2: 0.5, 3: 0.2488}

_DEFAULTS = {
    "ids": {"topology": "free", "bc": "N", "scheme": "graph_restriction", "samples": 10,
            "energy_grid": _ENERGY_DEFAULT, "format": "both"},
    "walk": {"topology": "periodic", "samples": 10, "walks": 1000, "start": "origin",
             "t_grid": {"kind": "log", "start": 1.0, "stop": 16.0, "num": 5}, "format": "both"},
    "spectrum": {"topology": "free", "bc": "N", "scheme": "graph_restriction", "format": "csv"},
    "mechanism": {"topology": "free", "samples": 100, "format": "json"},
    "verify": {"suite": "quick", "format": "json"},
}

MECHANISM_CHECKS = ("monotonicity", "linearization", "slope_large_deviation", "tauberian",
                    "heaviside", "finite_cluster_tail", "dirichlet_cube_scaling", "implication")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def expand_grid(spec, name: str = "grid") -> np.ndarray:
    if isinstance(spec, dict):
        unknown = set(spec) - {"kind", "start", "stop", "num"}
        if unknown:
            raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
        try:
            kind, a, b, n = spec["kind"], float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: needs kind, start, stop, num ({exc})") from None
        if n < 1:
            raise ConfigError(f"{name}: num must be >= 1")
        if kind == "linear":
            return np.linspace(a, b, n)
        if kind == "log":
            if a <= 0 or b <= 0:
                raise ConfigError(f"{name}: log grids need positive ends")
            return np.geomspace(a, b, n)
        if kind == "quadratic":
            return a + (b - a) * (np.arange(n) / max(n - 1, 1)) ** 2
        raise ConfigError(f"{name}: unknown kind {kind!r}")
    try:
        grid = np.asarray(spec, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a list of numbers or a grid object") from None
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError(f"{name}: must be a non-empty list")
    return grid


def parse_grid_flag(text: str):
    """``"0,0.1,0.2"`` or ``"log:0.02:0.2:13"`` (also ``linear:``/``quadratic:``)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 4:
            raise ConfigError(f"grid flag {text!r}: expected kind:start:stop:num")
        try:
            return {"kind": parts[0], "start": float(parts[1]), "stop": float(parts[2]),
                    "num": int(parts[3])}
        except ValueError:
            raise ConfigError(f"grid flag {text!r}: bad number") from None
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"grid flag {text!r}: bad number") from None


def _need(cfg, key, kind, command):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"{command}: missing required key {key!r}")
    value = cfg[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{command}: {key} must be an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{command}: {key} must be a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{command}: {key} must be a number, got {value!r}") from None
    return value


def resolve(command: str, file_config: dict | None = None, overrides: dict | None = None,
            environ=None) -> dict:
    """Merge preset < file < overrides, apply defaults, validate.

    Returns a plain-JSON resolved config; grids are expanded to explicit
    lists so the echoed record fully determines the run.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    environ = os.environ if environ is None else environ
    merged: dict = {}
    file_config = copy.deepcopy(file_config or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    allowed = ALLOWED_KEYS[command]
    for source, what in ((file_config, "config file"), (overrides, "flags")):
        unknown = set(source) - allowed
        if unknown:
            raise ConfigError(f"{command}: unknown keys in {what}: {sorted(unknown)}")
    preset = overrides.get("preset", file_config.get("preset"))
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update({k: copy.deepcopy(v) for k, v in PRESETS[preset].items() if k in allowed})
    merged.update(file_config)
    merged.update(overrides)
    for key, value in _DEFAULTS[command].items():
        merged.setdefault(key, copy.deepcopy(value))
    if merged.get("master_seed") is None:
        env = environ.get(SEED_ENV)
        if env is not None:
            try:
                merged["master_seed"] = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
        else:
            merged["master_seed"] = 0
    return _validate(command, merged)


def _validate(command: str, cfg: dict) -> dict:
    out = dict(cfg)
    out["master_seed"] = _need(cfg, "master_seed", int, command)
    if out["master_seed"] < 0:
        raise ConfigError("master_seed must be non-negative")
    fmt = out.get("format")
    if fmt not in ("csv", "json", "both"):
        raise ConfigError(f"format must be csv, json or both, got {fmt!r}")
    if command == "verify":
        if out["suite"] not in ("quick", "full"):
            raise ConfigError("suite must be 'quick' or 'full'")
        return out
    check = out.get("check") if command == "mechanism" else None
    if check == "dirichlet_cube_scaling":
        out["d"] = _need(cfg, "d", int, command)
        if out["d"] < 1:
            raise ConfigError("d must be >= 1")
    elif check not in ("tauberian", "heaviside"):
        out["d"] = _need(cfg, "d", int, command)
        out["L"] = _need(cfg, "L", int, command)
        out["p"] = _need(cfg, "p", float, command)
        try:
            BoxGeometry(out["d"], out["L"], out["topology"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= out["p"] <= 1.0:
            raise ConfigError(f"p must lie in [0, 1], got {out['p']}")
    for key in ("bc", "scheme"):
        if key in out:
            parse = BoundaryCondition.parse if key == "bc" else RestrictionScheme.parse
            try:
                out[key] = parse(out[key]).value
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    for key in ("samples", "walks"):
        if key in out:
            out[key] = _need(out, key, int, command)
            if out[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
    for key in ("energy_grid", "t_grid"):
        if key in out:
            spec = out[key]
            if key == "energy_grid" and isinstance(spec, dict) and spec.get("stop") is None:
                spec = {**spec, "stop": 4.0 * out.get("d", 1)}
            out[key] = expand_grid(spec, key).tolist()
    if "fit_window" in out and out["fit_window"] is not None:
        fw = out["fit_window"]
        if not (isinstance(fw, (list, tuple)) and len(fw) == 2):
            raise ConfigError("fit_window must be [lo, hi]")
        out["fit_window"] = [float(fw[0]), float(fw[1])]
        if not out["fit_window"][0] < out["fit_window"][1]:
            raise ConfigError("fit_window must satisfy lo < hi")
    if out.get("scheme") == "neumann_boundary" and out.get("bc") != "Dtilde":
        raise ConfigError("the neumann_boundary scheme applies to bc=Dtilde only")
    if "energy_grid" in out and command in ("ids", "spectrum"):
        grid = np.asarray(out["energy_grid"])
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("energy_grid must be strictly increasing")
        if command == "ids" and (grid[0] < -1e-9 or grid[-1] > 4 * out["d"]):
            raise ConfigError(f"energy_grid must lie within [0, {4 * out['d']}]")
    if "t_grid" in out:
        grid = np.asarray(out["t_grid"])
        if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            raise ConfigError("t_grid must be non-negative and strictly increasing")
    if command == "walk":
        if out["start"] not in ("origin", "uniform"):
            raise ConfigError("start must be 'origin' or 'uniform'")
        if out["start"] == "uniform" and out["topology"] != "periodic":
            raise ConfigError("start=uniform needs a periodic box")
        if out["topology"] == "periodic" and out["L"] < 3:
            raise ConfigError("periodic walks need L >= 3")
    if command == "mechanism":
        if out.get("check") not in MECHANISM_CHECKS:
            raise ConfigError(f"check must be one of {MECHANISM_CHECKS}")
    return out


def load_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    # an echoed output record nests the config under "config"
    if set(data) >= {"config"} and isinstance(data["config"], dict) and "command" in data:
        data = data["config"]
    return data


def geometry_of(cfg: dict) -> BoxGeometry:
    return BoxGeometry(cfg["d"], cfg["L"], cfg["topology"])
