"""Experiment configuration: single-file INI with flat, typed sections.

Parsing is fail-closed: unknown sections or keys, missing required keys,
and untypable values are all ConfigError.  The drive period is always
spanned by an integer number of steps (``steps_per_period``, or ``dt``
rounded to the nearest commensurate value), so stroboscopic samples land
on exact period multiples without interpolation.  The fully resolved
key-value map is carried along and embedded into every artifact.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass

from .errors import ConfigError
from .model import (MODEL_SECTION_KEYS, ModelSpec, PhaseSpaceGrid,
                    SpatialGrid, model_from_section)

__all__ = ["ExperimentConfig", "load_config", "config_from_dicts",
           "EXPERIMENT_NAMES"]

EXPERIMENT_NAMES = ("strong-qct", "weak-qct", "lyapunov-sweep",
                    "strobe-map", "isolated-decay")

_MODEL_TYPES = {
    "mass": float, "hbar": float, "k": float, "D": float,
    "coeffs": list, "drive_amp": float, "drive_omega": float,
    "x_min": float, "x_max": float, "n": int,
    "p_min": float, "p_max": float, "n_p": int,
}

# (type, default); _REQUIRED means the key must be present
_REQUIRED = object()

_NUMERICS_SCHEMA = {
    "steps_per_period": (int, None),
    "dt": (float, None),
    "t_total_periods": (float, _REQUIRED),
    "ensemble_n": (int, 1),
    "base_seed": (int, 0),
    "tau_r_periods": (float, 1.0),
    "delta0": (float, None),
    "check_interval": (int, 100),
    "workers": (int, 1),
    "record_stride": (int, 10),
}

_INITIAL_SCHEMA = {
    "x0": (float, 2.0),
    "p0": (float, 0.0),
    "width": (float, None),
}

_OUTPUT_SCHEMA = {
    "dir": (str, None),
}

_OPTION_SCHEMAS = {
    "strong-qct": {
        "vx_sqrt_max": (float, 1.0),
        "window_dt": (float, 0.01),
        "window_dx": (float, 0.01),
        "action_s": (float, None),
        "eval_x": (float, None),
        "eval_t": (float, 0.0),
        "threshold_much": (float, 10.0),
        "threshold_record": (float, 0.75),
    },
    "weak-qct": {
        "d_values": (list, [1e-5, 1e-3, 1e-2]),
        "tangent_periods": (float, 500.0),
        "tangent_x0": (float, 1.0),
        "tangent_p0": (float, 0.0),
        "extent_periods": (int, 200),
        "spectral_filter": (bool, True),
        "neg_tol": (float, 0.5),
    },
    "lyapunov-sweep": {
        "k_values": (list, _REQUIRED),
        "kind": (str, "sse"),
        "renorm_mode": (str, "displace_perturbed"),
        "renormalize": (bool, True),
        "quantum_backaction": (bool, False),
        "burn_fraction": (float, 0.1),
    },
    "strobe-map": {
        "contour_levels": (list, [0.05, 0.15, 0.25, 0.35, 0.45, 0.55]),
        "kde_bandwidth": (float, None),
        "density_grid_n": (int, 128),
        "skip_periods": (int, 20),
    },
    "isolated-decay": {
        "fit_t_min_periods": (float, 10.0),
        "fit_t_max_periods": (float, 500.0),
        "envelope_bins": (int, 10),
        "slope_min": (float, -1.1),
        "slope_max": (float, -0.9),
    },
}


@dataclass
class ExperimentConfig:
    """Parsed and resolved configuration for one experiment run."""

    experiment: str
    model: ModelSpec
    grid: SpatialGrid
    phase: PhaseSpaceGrid
    numerics: dict
    initial: dict
    options: dict
    out_dir: str | None
    resolved: dict

    @property
    def dt(self) -> float:
        return self.numerics["dt"]

    @property
    def steps_per_period(self) -> int:
        return self.numerics["steps_per_period"]


def _coerce(section: str, key: str, raw, target) -> object:
    try:
        if target is list:
            val = json.loads(raw) if isinstance(raw, str) else raw
            if not isinstance(val, list):
                raise ValueError("expected a JSON list")
            return val
        if target is bool:
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target is int:
            val = int(str(raw).strip(), 0) if isinstance(raw, str) else int(raw)
            return val
        return target(raw)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}: {exc}") from None


def _parse_section(name: str, items: dict, schema: dict) -> dict:
    unknown = set(items) - set(schema)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {sorted(unknown)}")
    out = {}
    for key, (target, default) in schema.items():
        # a None value (a resolved map fed back in) means "not set"
        if items.get(key) is not None:
            out[key] = _coerce(name, key, items[key], target)
        elif default is _REQUIRED:
            raise ConfigError(f"[{name}] missing required key: {key}")
        else:
            out[key] = default
    return out


def _resolve_stepping(numerics: dict, period: float) -> None:
    spp = numerics.get("steps_per_period")
    dt = numerics.get("dt")
    if spp is None and dt is None:
        spp = 1000
    if spp is None:
        spp = max(1, round(period / dt))
    if spp < 1:
        raise ConfigError("[numerics] steps_per_period must be >= 1")
    numerics["steps_per_period"] = int(spp)
    numerics["dt"] = period / spp


def config_from_dicts(experiment: str, sections: dict,
                      out_dir: str | None = None) -> ExperimentConfig:
    """Build a config from already-parsed section dictionaries (the CLI path
    goes through load_config; tests and notebooks can call this directly)."""
    if experiment not in EXPERIMENT_NAMES:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"choose from {EXPERIMENT_NAMES}")
    option_section = experiment.replace("-", "_")
    known = {"experiment", "model", "numerics", "initial", "output",
             option_section}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)} "
                          f"(expected a subset of {sorted(known)})")
    for required in ("model", "numerics"):
        if required not in sections:
            raise ConfigError(f"missing required section [{required}]")

    exp_items = _parse_section("experiment",
                               sections.get("experiment", {}),
                               {"name": (str, experiment)})
    if exp_items["name"] != experiment:
        raise ConfigError(f"[experiment] name={exp_items['name']!r} does not "
                          f"match the requested experiment {experiment!r}")

    model_items = _parse_section("model", sections["model"],
                                 {k: (_MODEL_TYPES[k], _REQUIRED)
                                  for k in MODEL_SECTION_KEYS})
    try:
        model, grid, phase = model_from_section(model_items)
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None

    numerics = _parse_section("numerics", sections.get("numerics", {}),
                              _NUMERICS_SCHEMA)
    dt_requested = numerics["dt"]
    _resolve_stepping(numerics, model.drive_period)
    if dt_requested is not None and \
            abs(numerics["dt"] - dt_requested) > 0.05 * dt_requested:
        raise ConfigError(
            f"[numerics] dt={dt_requested} is not close to any "
            "period-commensurate step; set steps_per_period explicitly")

    initial = _parse_section("initial", sections.get("initial", {}),
                             _INITIAL_SCHEMA)
    if initial["width"] is None and model.hbar > 0:
        initial["width"] = math.sqrt(model.hbar / 2.0)

    options = _parse_section(option_section,
                             sections.get(option_section, {}),
                             _OPTION_SCHEMAS[experiment])

    output = _parse_section("output", sections.get("output", {}),
                            _OUTPUT_SCHEMA)
    out = out_dir if out_dir is not None else output["dir"]

    resolved = {
        "experiment": experiment,
        "model": dict(model_items),
        "numerics": dict(numerics),
        "initial": dict(initial),
        option_section: dict(options),
        "output": {"dir": out},
    }
    return ExperimentConfig(experiment=experiment, model=model, grid=grid,
                            phase=phase, numerics=numerics, initial=initial,
                            options=options, out_dir=out, resolved=resolved)


def load_config(path: str, experiment: str,
                out_dir: str | None = None,
                base_seed: int | None = None,
                workers: int | None = None) -> ExperimentConfig:
    """Parse an INI file and apply CLI overrides (--out, --seed, --workers)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    if parser.defaults():
        raise ConfigError("top-level keys outside a section are not allowed")
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    cfg = config_from_dicts(experiment, sections, out_dir=out_dir)
    if base_seed is not None:
        cfg.numerics["base_seed"] = int(base_seed)
        cfg.resolved["numerics"]["base_seed"] = int(base_seed)
    if workers is not None:
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.numerics["workers"] = int(workers)
        cfg.resolved["numerics"]["workers"] = int(workers)
    return cfg
