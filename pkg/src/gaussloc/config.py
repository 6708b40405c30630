"""Experiment configuration files (TOML) and their schema."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("combes-thomas", "decompose", "fernique", "field-validate", "ids", "ladder", "localize", "msa-check",
         "msa-probe", "wegner")


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class KindInfo:
    kind: str
    doc: str
    anchor: str
    required: tuple[str, ...]


CATALOG = {
    "combes-thomas": KindInfo("combes-thomas", "randomized bounded potentials: localized resolvent vs the explicit bound",
                              "Combes-Thomas estimate", ("params.cases",)),
    "decompose": KindInfo("decompose", "V = lam u + U split: Var lam, positivity of u, decorrelation",
                          "one-parameter decomposition", ("covariance", "grid.h", "grid.points", "trials")),
    "fernique": KindInfo("fernique", "sup-norm exceedance tails vs the Fernique bound and their Gaussian slope",
                         "Fernique bound", ("covariance", "grid.h", "params.ell", "energies", "trials")),
    "field-validate": KindInfo("field-validate", "empirical lag covariance of circulant samples vs the exact covariance",
                               "Gaussian random potential", ("covariance", "grid.h", "grid.points", "trials")),
    "ids": KindInfo("ids", "Monte-Carlo integrated density of states on growing cubes",
                    "integrated density of states", ("grid.h", "grid.sizes", "energies", "trials")),
    "ladder": KindInfo("ladder", "mean-square error of truncated fields V_k - V across length scales",
                       "truncation ladder pointwise bound",
                       ("covariance", "geometry.N", "geometry.nu", "geometry.L0", "geometry.k_max", "grid.h",
                        "trials")),
    "localize": KindInfo("localize", "resolvent applied to a decaying probe and low-lying IPRs across volumes",
                         "resolvent boundedness criterion",
                         ("covariance", "grid.h", "grid.sizes", "energies", "trials")),
    "msa-check": KindInfo("msa-check", "certify an MSA parameter set (or search one) with the full constraint ledger",
                          "length-scale recursion constraints",
                          ("geometry.d", "geometry.N", "geometry.S", "geometry.delta", "geometry.zeta")),
    "msa-probe": KindInfo("msa-probe", "regularity probability at scale L, optionally the deterministic implication",
                          "regularity event",
                          ("covariance", "geometry.N", "geometry.nu", "geometry.r", "geometry.L", "grid.h",
                           "energies", "trials")),
    "wegner": KindInfo("wegner", "Monte-Carlo eigenvalue increments vs the Wegner bound",
                       "Wegner estimate", ("covariance", "grid.h", "grid.sizes", "energies", "params.eps", "trials")),
}

COVARIANCE_TYPES = {
    "gaussian": ("corr_length", "c0", "sigma", "ell_C"),
    "bump": ("radius", "c0", "sigma", "ell_C"),
    "power-law": ("zeta", "c0", "sigma", "kernel_radius", "table_h", "ell_C"),
}

TOP_KEYS = {"kind", "seed", "output", "trials", "workers", "covariance", "geometry", "grid", "energies", "solver",
            "params", "description"}
SECTION_KEYS = {
    "geometry": {"d", "N", "S", "nu", "r", "w", "rho", "theta", "delta", "zeta", "L0", "L", "k_max", "x"},
    "grid": {"h", "points", "sizes"},
    "energies": {"values", "start", "stop", "num"},
    "solver": {"rtol"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output: Path
    trials: int | None = None
    workers: int | None = None
    covariance: dict | None = None
    geometry: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    energies: list | None = None
    solver: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def build_covariance(self):
        from gaussloc import field as fld

        c = dict(self.covariance)
        typ = c.pop("type")
        d = int(c.pop("d"))
        builder = {"gaussian": fld.gaussian_spec, "bump": fld.bump_spec, "power-law": fld.power_law_spec}[typ]
        return builder(d, **c)


def _get(raw: dict, dotted: str):
    cur = raw
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def _number(path, v, integer=False, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _energies(raw) -> list | None:
    e = raw.get("energies")
    if e is None:
        return None
    if isinstance(e, list):
        return [_number(f"energies[{i}]", v) for i, v in enumerate(e)]
    if not isinstance(e, dict):
        raise ConfigError("energies", "expected a list or a table")
    for k in e:
        if k not in SECTION_KEYS["energies"]:
            raise ConfigError(f"energies.{k}", "unknown key")
    if "values" in e:
        if not isinstance(e["values"], list) or not e["values"]:
            raise ConfigError("energies.values", "expected a nonempty list")
        return [_number(f"energies.values[{i}]", v) for i, v in enumerate(e["values"])]
    for k in ("start", "stop", "num"):
        if k not in e:
            raise ConfigError(f"energies.{k}", "required when energies.values is absent")
    import numpy as np

    n = _number("energies.num", e["num"], integer=True, positive=True)
    return [float(x) for x in np.linspace(_number("energies.start", e["start"]), _number("energies.stop", e["stop"]), n)]


def parse_config(raw: dict, base: Path | None = None) -> ExperimentConfig:
    """Validate a parsed TOML table; raises ``ConfigError`` naming the first bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a table")
    for k in raw:
        if k not in TOP_KEYS:
            raise ConfigError(k, "unknown key")
    kind = raw.get("kind")
    if kind is None:
        raise ConfigError("kind", "required")
    if kind not in CATALOG:
        raise ConfigError("kind", f"unknown kind {kind!r}; one of {', '.join(KINDS)}")
    if "seed" not in raw:
        raise ConfigError("seed", "required (runs must be reproducible)")
    seed = _number("seed", raw["seed"], integer=True)
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    if "output" not in raw or not isinstance(raw["output"], str) or not raw["output"]:
        raise ConfigError("output", "required output directory (string)")
    out = Path(raw["output"])
    if base is not None and not out.is_absolute():
        out = base / out
    for sec, keys in SECTION_KEYS.items():
        if sec in raw:
            if not isinstance(raw[sec], dict) and sec != "energies":
                raise ConfigError(sec, "expected a table")
            if isinstance(raw[sec], dict):
                for k in raw[sec]:
                    if k not in keys:
                        raise ConfigError(f"{sec}.{k}", "unknown key")
    for path in CATALOG[kind].required:
        if _get(raw, path) is None:
            raise ConfigError(path, f"required for kind {kind!r}")
    cov = raw.get("covariance")
    if cov is not None:
        if not isinstance(cov, dict):
            raise ConfigError("covariance", "expected a table")
        typ = cov.get("type")
        if typ not in COVARIANCE_TYPES:
            raise ConfigError("covariance.type", f"one of {', '.join(COVARIANCE_TYPES)}")
        if "d" not in cov:
            raise ConfigError("covariance.d", "required")
        _number("covariance.d", cov["d"], integer=True, positive=True)
        for k, v in cov.items():
            if k in ("type", "d"):
                continue
            if k not in COVARIANCE_TYPES[typ]:
                raise ConfigError(f"covariance.{k}", f"unknown key for type {typ!r}")
            _number(f"covariance.{k}", v, positive=True)
    trials = raw.get("trials")
    if trials is not None:
        trials = _number("trials", trials, integer=True, positive=True)
    workers = raw.get("workers")
    if workers is not None:
        workers = _number("workers", workers, integer=True, positive=True)
    grid = dict(raw.get("grid", {}))
    if "h" in grid:
        _number("grid.h", grid["h"], positive=True)
    if "points" in grid:
        _number("grid.points", grid["points"], integer=True, positive=True)
    if "sizes" in grid:
        if not isinstance(grid["sizes"], list) or not grid["sizes"]:
            raise ConfigError("grid.sizes", "expected a nonempty list")
        for i, s in enumerate(grid["sizes"]):
            _number(f"grid.sizes[{i}]", s, positive=True)
    geom = dict(raw.get("geometry", {}))
    for k, v in geom.items():
        if k == "x":
            if not isinstance(v, list):
                raise ConfigError("geometry.x", "expected a list of coordinates")
            continue
        _number(f"geometry.{k}", v, integer=k in ("d", "N", "S", "k_max"))
    solver = dict(raw.get("solver", {}))
    if "rtol" in solver:
        _number("solver.rtol", solver["rtol"], positive=True)
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "expected a table")
    if kind == "msa-check" and params.get("mode", "check") == "check":
        for k in ("nu", "r", "rho", "theta", "w", "L0"):
            if k not in geom:
                raise ConfigError(f"geometry.{k}", "required for kind 'msa-check' in check mode")
    if kind == "msa-check" and params.get("mode", "check") not in ("check", "search"):
        raise ConfigError("params.mode", "one of 'check', 'search'")
    return ExperimentConfig(kind, seed, out, trials, workers, cov, geom, grid, _energies(raw), solver, dict(params),
                            raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"TOML syntax error: {exc}") from exc
    return parse_config(raw)
