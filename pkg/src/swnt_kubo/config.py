"""TOML run configuration: schema, defaults, validation and overrides."""
import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .manybody import ModelParams, particle_number_from_lattice
from .potentials import CylinderGeometry, PeriodicPotentialSpec

OUTPUT_ENV = "SWNT_KUBO_OUTPUT_DIR"
JOB_NAMES = ("spectrum", "sweep", "lines", "oracle", "convergence")
_JOB_ALIASES = {"oracle_compare": "oracle", "converge": "convergence",
                "convergence_study": "convergence"}

DEFAULTS = {
    "model": {"a": 1.0, "lambda": 0.0, "M_modes": 6, "eps": 1.0, "charge": 1.0,
              "sector": None, "v_per": {}},
    "conductivity": {"beta": None},
    "omega_grid": {"min": 0.1, "max": 20.0, "count": 200, "spacing": "linear"},
    "run": {"jobs": ["spectrum"], "output_dir": "swnt_out", "deterministic": True,
            "workers": 1},
    "numerics": {"dense_threshold": 2000, "eig_tol": 1e-9, "tail_rel": 1e-8,
                 "max_dim": 2_000_000},
    "oracle": {"omegas": None, "E_step": 1e-4, "dt": None, "richardson": False,
               "beta": None, "debug_trajectory": False},
    "convergence": {"omegas": None, "levels": 3},
}
_MODEL_KEYS = {"r", "a", "L", "N", "lattice", "lambda", "M_modes", "eps", "charge",
               "sector", "v_per"}


class ConfigError(ValidationError):
    """Configuration file could not be parsed or violates the schema."""


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "v_per":
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _number(section, key, raw, positive=False, integer=False):
    val = raw.get(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number (got {val!r})")
    if integer and int(val) != val:
        raise ConfigError(f"[{section}] {key} must be an integer (got {val!r})")
    if not math.isfinite(val):
        raise ConfigError(f"[{section}] {key} must be finite")
    if positive and not val > 0:
        raise ConfigError(f"[{section}] {key} must be > 0 (got {val!r})")
    return int(val) if integer else float(val)


@dataclass(frozen=True)
class OmegaGrid:
    min: float
    max: float
    count: int
    spacing: str = "linear"

    def __post_init__(self):
        if not self.min > 0:
            raise ConfigError("omega_grid.min must be > 0 (the conductivity needs omega > 0)")
        if self.max < self.min:
            raise ConfigError("omega_grid.max must be >= omega_grid.min")
        if self.count < 1:
            raise ConfigError("omega_grid.count must be >= 1")
        if self.spacing not in ("linear", "log"):
            raise ConfigError("omega_grid.spacing must be 'linear' or 'log'")

    def values(self):
        from .conductivity import omega_grid
        return omega_grid(self.min, self.max, self.count, self.spacing)


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    eta: float
    beta: Optional[float]
    omega_grid: OmegaGrid
    jobs: tuple
    output_dir: Path
    deterministic: bool
    raw: dict
    sector: Optional[int] = None

    @property
    def numerics(self):
        return self.raw["numerics"]

    @property
    def oracle(self):
        return self.raw["oracle"]

    @property
    def convergence(self):
        return self.raw["convergence"]

    @property
    def workers(self):
        return self.raw["run"]["workers"]

    def model_section(self):
        """Normalized model description used for hashing."""
        m = self.model
        g = m.geometry
        return {"r": g.r, "a": g.a, "L": g.L, "eps": g.eps, "charge": g.charge,
                "N": m.N, "lambda": m.lam, "M_modes": m.M_modes, "sector": self.sector,
                "v_per": {str(j): c for j, c in m.v_per.fourier_coeffs.items()}}

    def model_hash(self):
        text = json.dumps(self.model_section(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def echo(self):
        """Fully defaulted configuration as plain data."""
        out = copy.deepcopy(self.raw)
        out["run"]["output_dir"] = str(self.output_dir)
        return out


def _model_from(raw):
    sec = raw["model"]
    for key in ("r", "L"):
        if key not in sec:
            raise ConfigError(f"[model] {key} is required")
    r = _number("model", "r", sec, positive=True)
    a = _number("model", "a", sec, positive=True)
    L = _number("model", "L", sec, positive=True, integer=True)
    geom = CylinderGeometry(r=r, a=a, L=L, eps=_number("model", "eps", sec, positive=True),
                            charge=_number("model", "charge", sec))
    if "N" in sec:
        N = _number("model", "N", sec, positive=True, integer=True)
    elif "lattice" in sec:
        lat = sec["lattice"]
        N = particle_number_from_lattice(L, r, _number("model.lattice", "b", lat, positive=True),
                                         _number("model.lattice", "n0", lat, positive=True))
    else:
        raise ConfigError("[model] needs N or a [model.lattice] table with b and n0")
    v_per = sec.get("v_per") or {}
    if not isinstance(v_per, dict):
        raise ConfigError("[model.v_per] must map harmonic index to coefficient, e.g. 1 = 0.5")
    try:
        harmonics = {int(j): float(c) for j, c in v_per.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model.v_per] bad entry: {exc}") from None
    params = ModelParams(geom, N=N, lam=_number("model", "lambda", sec),
                         v_per=PeriodicPotentialSpec(harmonics),
                         M_modes=_number("model", "M_modes", sec, integer=True))
    sector = sec.get("sector")
    if sector is not None and (isinstance(sector, bool) or not isinstance(sector, int)):
        raise ConfigError("[model] sector must be an integer")
    return params, sector


def _jobs_from(raw):
    jobs = raw["run"]["jobs"]
    if isinstance(jobs, str):
        jobs = [jobs]
    out = []
    for job in jobs:
        name = _JOB_ALIASES.get(job, job)
        if name not in JOB_NAMES:
            raise ConfigError(f"unknown job {job!r}; choose from {', '.join(JOB_NAMES)}")
        if name not in out:
            out.append(name)
    return tuple(out)


def build_config(data, base_dir=None):
    """Validate a parsed mapping and fill defaults."""
    if "model" not in data:
        raise ConfigError("missing [model] section")
    raw = _merge(DEFAULTS, data)
    # eta is also accepted at top level or inside [model] for short configs
    for holder in (raw, raw["model"]):
        if "eta" in holder:
            raw["conductivity"].setdefault("eta", holder.pop("eta"))
    if "eta" not in raw["conductivity"]:
        raise ConfigError("[conductivity] eta is required")
    unknown = set(raw["model"]) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"[model] unknown keys: {', '.join(sorted(unknown))}")
    try:
        params, sector = _model_from(raw)
    except ValidationError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    eta = _number("conductivity", "eta", raw["conductivity"], positive=True)
    beta = raw["conductivity"].get("beta")
    if beta is not None:
        beta = _number("conductivity", "beta", raw["conductivity"], positive=True)
    g = raw["omega_grid"]
    grid = OmegaGrid(_number("omega_grid", "min", g), _number("omega_grid", "max", g),
                     _number("omega_grid", "count", g, integer=True), str(g["spacing"]))
    for key in ("oracle", "convergence"):
        oms = raw[key].get("omegas")
        if oms is not None:
            if not isinstance(oms, list) or not oms:
                raise ConfigError(f"[{key}] omegas must be a non-empty list")
            if any(not isinstance(w, (int, float)) or not w > 0 for w in oms):
                raise ConfigError(f"[{key}] omegas must all be > 0")
    E = _number("oracle", "E_step", raw["oracle"], positive=True)
    if E > 1:
        raise ConfigError("[oracle] E_step must be <= 1")
    if _number("run", "workers", raw["run"], positive=True, integer=True) < 1:
        raise ConfigError("[run] workers must be >= 1")
    out_dir = os.environ.get(OUTPUT_ENV) or raw["run"]["output_dir"]
    out_path = Path(out_dir)
    if not out_path.is_absolute() and base_dir is not None:
        out_path = Path(base_dir) / out_path
    return RunConfig(params, eta, beta, grid, _jobs_from(raw), out_path,
                     bool(raw["run"]["deterministic"]), raw, sector)


def parse_override(text):
    """``section.key=value`` with the value read as a TOML literal when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    return key.split("."), parsed


def apply_overrides(data, overrides):
    data = copy.deepcopy(data)
    for text in overrides or ():
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-table")
        node[path[-1]] = value
    return data


def load_config(path, overrides=None):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return build_config(apply_overrides(data, overrides), base_dir=path.parent)
