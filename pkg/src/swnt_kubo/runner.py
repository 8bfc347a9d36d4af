"""Job orchestration: kernel table -> basis -> H -> spectrum -> curves, lines, oracle.

Every artifact goes to ``cfg.output_dir``; the spectrum is cached under
``cache/`` keyed by the model hash, and ``manifest.json`` lists every file
in the directory together with per-job status and diagnostics.
"""
import csv
import hashlib
import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .conductivity import (ConductivityCurve, drude_bracket, line_spectrum,
                           sigma_finite_beta, sigma_leading)
from .errors import (CapacityError, ConvergenceError, StabilityError, SwntError,
                     ToleranceError, ValidationError)
from .kubo import KuboSystem, time_domain_conductivity
from .manybody import (assemble_hamiltonian, build_basis, momentum_operator,
                       truncation_edge)
from .potentials import PairKernelTable
from .spectral import (DipoleWeights, SpectralResult, spectrum_for_conductivity,
                       write_spectrum_csv)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CACHE_DIR = "cache"
NUMERICAL_ERRORS = (ConvergenceError, StabilityError, ToleranceError, CapacityError,
                    np.linalg.LinAlgError, FloatingPointError)


def _fmt(x):
    return format(float(x), ".17g")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (str, int, np.integer)) else _fmt(v)
                             for v in row])


def _write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


@dataclass
class SpectrumBundle:
    params: object
    P: np.ndarray
    res: SpectralResult
    weights: DipoleWeights
    cache_hit: bool
    diagnostics: dict


@dataclass
class ResultManifest:
    model_hash: str
    artifacts: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    jobs: dict = field(default_factory=dict)

    @property
    def failed(self):
        return [name for name, info in self.jobs.items() if info["status"] != "ok"]

    def exit_code(self):
        if not self.failed:
            return 0
        kinds = {self.jobs[name].get("kind") for name in self.failed}
        return 2 if "numerical" in kinds else 1

    def as_dict(self):
        return {"model_hash": self.model_hash, "artifacts": self.artifacts,
                "diagnostics": self.diagnostics, "jobs": self.jobs}


def _numerics_key(cfg):
    n = cfg.numerics
    return {"eig_tol": n["eig_tol"], "dense_threshold": n["dense_threshold"],
            "tail_rel": n["tail_rel"]}


def _spectrum_diagnostics(params, res, weights):
    diag = {
        "dim": res.dim,
        "n_converged": res.n_converged,
        "mu_0": float(res.eigenvalues[0]),
        "ground_degeneracy": res.ground_degeneracy(),
        "max_residual": float(np.max(res.residuals)),
        "orthonormality_error": res.orthonormality_error(),
        "weight_total": weights.total,
        "weight_tail": weights.tail,
        "truncation_edge": truncation_edge(params),
    }
    try:
        diag["gap"] = res.gap()
    except SwntError:
        diag["gap"] = None
    if diag["gap"] is not None and diag["gap"] < 1e-10:
        diag["gap_warning"] = "first gap numerically degenerate"
    return diag


def compute_spectrum(cfg, params=None, use_cache=True):
    """Diagonalize the configured model, reusing a cached spectrum when possible."""
    params = params or cfg.model
    num = cfg.numerics
    cache_path = None
    key = _numerics_key(cfg)
    if use_cache and params is cfg.model:
        cache_path = cfg.output_dir / CACHE_DIR / f"spectrum_{cfg.model_hash()}.npz"
        if cache_path.exists():
            try:
                return _load_cache(cache_path, params, key)
            except (KeyError, ValueError, OSError) as exc:
                log.warning("ignoring unreadable spectrum cache %s: %s", cache_path, exc)
    table = PairKernelTable.build(params.geometry, 2 * params.M_modes)
    basis = build_basis(params, cfg.sector, max_dim=num["max_dim"])
    H = assemble_hamiltonian(params, basis, table)
    P = momentum_operator(basis, params.geometry)
    res, weights = spectrum_for_conductivity(H, P, tail_rel=num["tail_rel"], tol=num["eig_tol"],
                                             dense_threshold=num["dense_threshold"])
    diag = _spectrum_diagnostics(params, res, weights)
    diag["hermiticity_error"] = H.hermiticity_error()
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(cache_path, mu=res.eigenvalues, V=res.eigenvectors, residuals=res.residuals,
                 dim=res.dim, P=P, w=weights.w, ground=weights.ground, total=weights.total,
                 matrix=weights.matrix, numerics=json.dumps(key, sort_keys=True),
                 diagnostics=json.dumps(diag, sort_keys=True))
    return SpectrumBundle(params, P, res, weights, False, diag)


def _load_cache(path, params, key):
    with np.load(path, allow_pickle=False) as z:
        if json.loads(str(z["numerics"])) != key:
            raise ValueError("cached spectrum used different numerical settings")
        res = SpectralResult(z["mu"], z["V"], len(z["mu"]), z["residuals"], int(z["dim"]))
        weights = DipoleWeights(z["w"], z["ground"], float(z["total"]), z["matrix"])
        diag = json.loads(str(z["diagnostics"]))
        return SpectrumBundle(params, z["P"], res, weights, True, diag)


def _default_beta(cfg, bundle):
    gap = bundle.diagnostics.get("gap")
    if gap is None or gap <= 0:
        raise ValidationError("no beta configured and the spectrum has no usable gap")
    return 20.0 / gap


class Runner:
    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.roles = {}
        self._bundle = None
        self.manifest = ResultManifest(cfg.model_hash())

    def emit(self, name, role):
        self.roles[name] = role
        return self.out / name

    def bundle(self):
        if self._bundle is None:
            self._bundle = compute_spectrum(self.cfg)
            self.manifest.diagnostics["spectrum"] = self._bundle.diagnostics
            self.manifest.diagnostics["spectrum_cache"] = (
                "hit" if self._bundle.cache_hit else "miss"
            )
        return self._bundle

    def job_spectrum(self):
        b = self.bundle()
        write_spectrum_csv(self.emit("spectrum.csv", "spectrum"), b.res, b.weights)
        return {"n_levels": b.res.n_converged}

    def job_sweep(self):
        b = self.bundle()
        cfg = self.cfg
        om = cfg.omega_grid.values()
        values = sigma_leading(b.weights, b.res.eigenvalues, om, cfg.eta, b.params)
        # the Drude-like bracket is reported, not assumed to vanish by a sum rule
        bracket = np.atleast_1d(drude_bracket(b.weights, b.res.eigenvalues, om, cfg.eta,
                                              b.params))
        diag = {"weight_tail": b.weights.tail, "n_levels": b.res.n_converged,
                "drude_bracket": {"at_omega_min": float(bracket[0]),
                                  "at_omega_max": float(bracket[-1]),
                                  "max_abs": float(np.max(np.abs(bracket)))}}
        curve = ConductivityCurve(om, np.atleast_1d(values), cfg.eta, None, cfg.model_hash(), diag)
        curve.to_csv(self.emit("sweep.csv", "curve: leading term vs omega"))
        curve.write_metadata(self.emit("sweep.json", "metadata for sweep.csv"))
        info = {"points": len(om)}
        if cfg.beta is not None:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                vb = sigma_finite_beta(b.res, b.weights, cfg.beta, om, cfg.eta, b.params)
            diag_b = dict(diag, warnings=[str(w.message) for w in caught])
            curve_b = ConductivityCurve(om, np.atleast_1d(vb), cfg.eta, cfg.beta,
                                        cfg.model_hash(), diag_b)
            curve_b.to_csv(self.emit("sweep_beta.csv", "curve: finite-beta conductivity"))
            curve_b.write_metadata(self.emit("sweep_beta.json", "metadata for sweep_beta.csv"))
        return info

    def job_lines(self):
        b = self.bundle()
        lines = line_spectrum(b.weights, b.res.eigenvalues, b.params)
        lines.to_csv(self.emit("lines.csv", "delta-peak line spectrum"))
        return {"n_lines": len(lines)}

    def job_oracle(self):
        b = self.bundle()
        cfg = self.cfg
        orc = cfg.oracle
        if not b.res.complete:
            raise ValidationError("oracle comparison needs the complete spectrum (dense path)")
        beta = orc["beta"] or cfg.beta or _default_beta(cfg, b)
        oms = np.array(orc["omegas"] if orc["omegas"] else cfg.omega_grid.values(), dtype=float)
        system = KuboSystem.from_spectrum(b.res, b.P, b.params.N, b.params.geometry)
        E = float(orc["E_step"])

        def one(item):
            i, w = item
            traj = None
            if orc["debug_trajectory"]:
                traj = self.emit(f"trajectory_{i:03d}.csv", f"debug trajectory at omega={_fmt(w)}")
            return time_domain_conductivity(system, beta, w, cfg.eta, (E,), orc["dt"],
                                            trajectory_path=traj,
                                            richardson=bool(orc["richardson"]))

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, enumerate(oms)))
        freq = np.atleast_1d(sigma_finite_beta(b.res, b.weights, beta, oms, cfg.eta, b.params))
        rows = []
        for w, sf, r in zip(oms, freq, results):
            st = r.sigma[E]
            rows.append((w, sf, st, abs(st - sf) / abs(sf) if sf != 0 else float("inf")))
        _write_rows(self.emit("compare.csv", "frequency vs time-domain conductivity"),
                    ["omega", "sigma_freq", "sigma_time", "rel_diff"], rows)
        return {"beta": beta, "E_step": E, "dt": results[0].dt, "n_steps": results[0].n_steps,
                "t_start": results[0].t_start,
                "max_rel_diff": max(r[3] for r in rows),
                "max_norm_drift": max(r.norm_drift for r in results)}

    def job_convergence(self):
        return convergence_study(self.cfg, self)

    def run(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for name in self.cfg.jobs:
            handler = getattr(self, f"job_{name}")
            try:
                info = handler()
                self.manifest.jobs[name] = {"status": "ok", **(info or {})}
            except NUMERICAL_ERRORS as exc:
                log.error("job %s failed: %s", name, exc)
                self.manifest.jobs[name] = {"status": "failed", "kind": "numerical",
                                            "error": f"{type(exc).__name__}: {exc}"}
            except (ValidationError, ValueError) as exc:
                log.error("job %s failed: %s", name, exc)
                self.manifest.jobs[name] = {"status": "failed", "kind": "validation",
                                            "error": f"{type(exc).__name__}: {exc}"}
        self._write_manifest()
        return self.manifest

    def _write_manifest(self):
        cfg = self.cfg
        self.emit("config_echo.json", "configuration with defaults filled")
        _write_json(self.out / "config_echo.json", cfg.echo())
        self.manifest.diagnostics["backend"] = backend_name()
        self.manifest.diagnostics["version"] = __version__
        artifacts = []
        for path in sorted(self.out.rglob("*")):
            if not path.is_file() or path.name == MANIFEST_NAME and path.parent == self.out:
                continue
            rel = path.relative_to(self.out).as_posix()
            role = self.roles.get(rel)
            if role is None:
                role = "spectrum cache" if rel.startswith(CACHE_DIR + "/") else "stale (earlier run)"
            entry = {"path": rel, "role": role}
            if not rel.startswith(CACHE_DIR + "/"):
                entry["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
            artifacts.append(entry)
        artifacts.append({"path": MANIFEST_NAME, "role": "manifest"})
        self.manifest.artifacts = artifacts
        _write_json(self.out / MANIFEST_NAME, self.manifest.as_dict())


def convergence_study(cfg, runner=None):
    """Drift of mu_0, the gap and the leading conductivity under M doubling, plus dt halving."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    levels = int(cfg.convergence["levels"])
    if levels < 2:
        raise ValidationError("[convergence] levels must be >= 2")
    base = runner.bundle() if runner is not None else compute_spectrum(cfg)
    oms = cfg.convergence["omegas"]
    if not oms:
        grid = cfg.omega_grid.values()
        oms = [grid[len(grid) // 4], grid[len(grid) // 2], grid[(3 * len(grid)) // 4]]
    oms = np.array(oms, dtype=float)

    def quantities(bundle):
        vals = {"mu_0": float(bundle.res.eigenvalues[0]), "gap": bundle.diagnostics.get("gap")}
        sig = np.atleast_1d(sigma_leading(bundle.weights, bundle.res.eigenvalues, oms, cfg.eta,
                                          bundle.params))
        for w, s in zip(oms, sig):
            vals[f"sigma@{_fmt(w)}"] = float(s)
        return vals

    rows = []
    prev = None
    M = cfg.model.M_modes
    table = {}
    for level in range(levels):
        params = replace(cfg.model, M_modes=M * 2**level) if level else cfg.model
        bundle = base if level == 0 else compute_spectrum(cfg, params, use_cache=False)
        vals = quantities(bundle)
        table[params.M_modes] = vals
        for q, v in vals.items():
            drift = "" if prev is None or v is None or prev[q] is None else abs(v - prev[q])
            rows.append((q, params.M_modes, 2 * params.M_modes, bundle.res.dim,
                         "" if v is None else v, drift))
        prev = vals
    name = "convergence.csv"
    path = runner.emit(name, "drift under mode doubling") if runner else out / name
    _write_rows(path, ["quantity", "M_modes", "M_fourier", "dim", "value", "drift"], rows)

    dt_rows = []
    info = {"levels": levels, "M_modes": sorted(table)}
    if base.res.complete:
        beta = cfg.beta or _default_beta(cfg, base)
        system = KuboSystem.from_spectrum(base.res, base.P, base.params.N, base.params.geometry)
        E = float(cfg.oracle["E_step"])
        for w in oms:
            coarse = time_domain_conductivity(system, beta, w, cfg.eta, (E,), cfg.oracle["dt"])
            fine = time_domain_conductivity(system, beta, w, cfg.eta, (E,), 0.5 * coarse.dt)
            s1, s2 = coarse.sigma[E], fine.sigma[E]
            dt_rows.append((w, coarse.dt, s1, s2, abs(s2 - s1)))
        name = "convergence_dt.csv"
        path = runner.emit(name, "time-domain drift under dt halving") if runner else out / name
        _write_rows(path, ["omega", "dt", "sigma_time_dt", "sigma_time_half_dt", "drift"], dt_rows)
        info["max_dt_drift"] = max(r[4] for r in dt_rows)
    return info


def run_jobs(cfg):
    return Runner(cfg).run()
