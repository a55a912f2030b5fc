"""YAML run configuration with schema validation."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .sampling import DesignKind

DEFAULTS = {
    "seed": 0,
    "grid": {"rows": 20, "cols": 20, "cell_side": 1.0},
    "population": {"total": 20000, "rho_levels": [0.3, 0.5, 0.7]},
    "epidemic": {
        "seed_cases": 10,
        "count_exposed": False,
        "phases": [
            {"duration_days": 28, "m1_frac": 0.10, "m2_frac": 0.05, "c_n": 5.0, "c_p": 5.0, "i_m": 2},
            {"duration_days": 42, "m1_frac": 0.01, "m2_frac": 0.0, "c_n": 2.0, "c_p": 3.0, "i_m": 1},
        ],
        "disease": {
            "exposed_duration": 5, "infectious_duration": 14,
            "p_E_to_I": 0.25, "p_E_to_A": 0.75, "p_I_to_D": 0.15, "p_I_to_R": 0.85,
        },
        "moran_scheme": "queen",
    },
    "experiment": {
        "survey_days": [15, 29, 43],
        "designs": ["FPPS", "CBV", "LP", "LCBV", "LCBG", "LCBVG"],
        "m_levels": [80],
        "n_bar_levels": [3],
        "replicates": 10000,
        "lpm_variant": "nearest",
        "geo_quadratic": False,
        "threads": 1,
        "smoke": False,
        "table_m": 80,
        "table_n_bar": 3,
        "table4_day": 15,
    },
    "screening": {
        "day": 29,
        "rho": 0.3,
        "designs": ["LCBV", "LCBG", "LCBVG"],
        "rules": [[1, "hide", 0.8], [2, "reveal", 0.8], [3, "hide", 0.8], [4, "reveal", 0.5]],
    },
    "variance": {
        "instance": "toy",
        "toy": {"rows": 2, "cols": 3, "sizes": [3, 5, 8, 4, 7, 6], "jitter": 0.4},
        "rho": 0.3,
        "day": 15,
        "design": "FPPS",
        "m": 3,
        "n_bar": 3,
        "joint_draws": 100000,
        "exact": True,
        "model": {
            "mean": "linear",
            "beta": [1.0, 0.5, -0.3],
            "cov": {"kind": "gaussian", "sigma_u2": 1.0, "alpha": 1.5, "tau2": 0.0, "rho_base": 0.5},
        },
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _check(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"invalid config key '{key}': {msg}")


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(cfg: dict) -> dict:
    _check(_is_int(cfg["seed"]) and cfg["seed"] >= 0, "seed", "must be a nonnegative integer")
    g = cfg["grid"]
    _check(_is_int(g["rows"]) and g["rows"] >= 2, "grid.rows", "must be an integer >= 2")
    _check(_is_int(g["cols"]) and g["cols"] >= 2, "grid.cols", "must be an integer >= 2")
    _check(_is_num(g["cell_side"]) and g["cell_side"] > 0, "grid.cell_side", "must be positive")
    p = cfg["population"]
    _check(_is_int(p["total"]) and p["total"] >= 1, "population.total", "must be a positive integer")
    _check(isinstance(p["rho_levels"], list) and p["rho_levels"], "population.rho_levels", "must be a nonempty list")
    for r in p["rho_levels"]:
        _check(_is_num(r) and 0 <= r < 1, "population.rho_levels", f"{r!r} not in [0, 1)")
    e = cfg["epidemic"]
    _check(_is_int(e["seed_cases"]) and e["seed_cases"] >= 1, "epidemic.seed_cases", "must be a positive integer")
    _check(isinstance(e["count_exposed"], bool), "epidemic.count_exposed", "must be true or false")
    _check(isinstance(e["phases"], list) and e["phases"], "epidemic.phases", "must be a nonempty list")
    phase_keys = set(DEFAULTS["epidemic"]["phases"][0])
    for k, ph in enumerate(e["phases"]):
        _check(isinstance(ph, dict) and set(ph) == phase_keys, f"epidemic.phases[{k}]",
               f"needs exactly the keys {sorted(phase_keys)}")
    _check(e["moran_scheme"] in ("rook", "queen"), "epidemic.moran_scheme", "must be 'rook' or 'queen'")
    x = cfg["experiment"]
    for d in x["designs"]:
        _check(d in DesignKind.__members__, "experiment.designs", f"unknown design {d!r}")
    _check(_is_int(x["replicates"]) and x["replicates"] >= 1, "experiment.replicates", "must be a positive integer")
    _check(_is_int(x["threads"]) and x["threads"] >= 1, "experiment.threads", "must be a positive integer")
    _check(isinstance(x["smoke"], bool), "experiment.smoke", "must be true or false")
    _check(x["smoke"] or x["replicates"] >= 1000, "experiment.replicates",
           "at least 1000 are needed for SE claims (set experiment.smoke for quick runs)")
    _check(x["lpm_variant"] in ("nearest", "mutual"), "experiment.lpm_variant", "must be 'nearest' or 'mutual'")
    for key in ("survey_days", "m_levels", "n_bar_levels"):
        _check(isinstance(x[key], list) and x[key] and all(_is_int(v) and v >= 1 for v in x[key]),
               f"experiment.{key}", "must be a nonempty list of positive integers")
    s = cfg["screening"]
    for d in s["designs"]:
        _check(d in DesignKind.__members__, "screening.designs", f"unknown design {d!r}")
    for rule in s["rules"]:
        _check(isinstance(rule, list) and len(rule) == 3, "screening.rules", "each rule is [quadrant, action, fraction]")
        _check(rule[1] in ("hide", "reveal"), "screening.rules", f"unknown action {rule[1]!r}")
        _check(_is_num(rule[2]) and 0 <= rule[2] <= 1, "screening.rules", f"fraction {rule[2]!r} not in [0, 1]")
    v = cfg["variance"]
    _check(v["instance"] in ("toy", "frame"), "variance.instance", "must be 'toy' or 'frame'")
    _check(v["design"] in DesignKind.__members__, "variance.design", f"unknown design {v['design']!r}")
    _check(v["model"]["mean"] in ("linear", "logistic"), "variance.model.mean", "must be 'linear' or 'logistic'")
    _check(v["model"]["cov"]["kind"] in ("power", "gaussian"), "variance.model.cov.kind",
           "must be 'power' or 'gaussian'")
    _check(_is_num(v["model"]["cov"]["sigma_u2"]) and v["model"]["cov"]["sigma_u2"] >= 0,
           "variance.model.cov.sigma_u2", "must be nonnegative")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults merged with the YAML file at ``path`` (or a run manifest) and ``overrides``."""
    user = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
        if "manifest_version" in user:
            user = user["config"]
    cfg = _merge(DEFAULTS, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
