"""Frequency-domain Kubo conductivity from a converged spectrum.

Units: hbar = m_e = 1, the carrier charge is ``geometry.charge`` and the
conductivity is per unit tube area ``S = 2 pi r La``.  With
``D = mu_k - mu_0`` the leading (ground-state) term reads

    4 e^2/(m^2 S) w eta sum_k w_k / ([(D - w)^2 + eta^2][(D + w)^2 + eta^2])
      + e^2/(m S) eta/(w^2 + eta^2) {N - (2/m) sum_k (D + 2w)/((D + w)^2 + eta^2) w_k}

and the exact finite-temperature trace replaces the ground level by a
Boltzmann average over initial states.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, ValidationError
from .spectral import DEGENERACY_TOL, reduced_partition

ELECTRON_MASS = 1.0


def _check_freq(omega, eta):
    omega = np.asarray(omega, dtype=float)
    if np.any(~np.isfinite(omega)) or np.any(omega <= 0.0):
        raise DomainError("frequencies must be finite and > 0")
    if not eta > 0:
        raise DomainError("eta must be > 0")
    return omega


def prefactors(geometry):
    """(e^2/(m S), e^2/(m^2 S)) for the tube geometry."""
    e2 = geometry.charge**2
    S = geometry.area
    return e2 / (ELECTRON_MASS * S), e2 / (ELECTRON_MASS**2 * S)


def lorentzian_kernel(delta, omega, eta):
    """F(D; w, eta) = (2 eta/(w^2+eta^2)) D (D^2+eta^2-3w^2) / ([(D-w)^2+eta^2][(D+w)^2+eta^2]).

    Odd in ``delta``; broadcasts over all arguments.
    """
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    num = delta * (delta * delta + eta * eta - 3.0 * omega * omega)
    den = ((delta - omega) ** 2 + eta * eta) * ((delta + omega) ** 2 + eta * eta)
    return 2.0 * eta / (omega * omega + eta * eta) * num / den


def _gaps_and_weights(weights, eigs):
    w = np.asarray(getattr(weights, "w", weights), dtype=float)
    mu = np.asarray(eigs, dtype=float)
    if w.shape != mu.shape:
        raise ValidationError("weights and eigenvalues differ in length")
    return mu - mu[0], w


def absorptive_sum(weights, eigs, omega, eta, params, tol=DEGENERACY_TOL):
    """Double-Lorentzian sum restricted to levels above the ground level.

    Ground-level terms (D = 0) cancel exactly against the bracket and are
    left out, so this is the part that produces absorption lines.
    """
    omega = _check_freq(omega, eta)
    gaps, w = _gaps_and_weights(weights, eigs)
    excited = gaps > tol * max(1.0, abs(eigs[0]))
    d = gaps[excited][:, None]
    wk = w[excited][:, None]
    om = np.atleast_1d(omega)[None, :]
    den = ((d - om) ** 2 + eta**2) * ((d + om) ** 2 + eta**2)
    _, c2 = prefactors(params.geometry)
    out = 4.0 * c2 * om[0] * eta * np.sum(wk / den, axis=0)
    return out if omega.ndim else float(out[0])


def drude_bracket(weights, eigs, omega, eta, params):
    """Second term of the leading conductivity, including the ground level."""
    omega = _check_freq(omega, eta)
    gaps, w = _gaps_and_weights(weights, eigs)
    om = np.atleast_1d(omega)[None, :]
    d = gaps[:, None]
    corr = np.sum((d + 2.0 * om) / ((d + om) ** 2 + eta**2) * w[:, None], axis=0)
    c1, _ = prefactors(params.geometry)
    out = c1 * eta / (om[0] ** 2 + eta**2) * (params.N - 2.0 / ELECTRON_MASS * corr)
    return out if omega.ndim else float(out[0])


def sigma_leading(weights, eigs, omega, eta, params):
    """Ground-state conductivity, written term by term as the double-Lorentzian form."""
    omega = _check_freq(omega, eta)
    gaps, w = _gaps_and_weights(weights, eigs)
    om = np.atleast_1d(omega)[None, :]
    d = gaps[:, None]
    den = ((d - om) ** 2 + eta**2) * ((d + om) ** 2 + eta**2)
    c1, c2 = prefactors(params.geometry)
    first = 4.0 * c2 * om[0] * eta * np.sum(w[:, None] / den, axis=0)
    corr = np.sum((d + 2.0 * om) / ((d + om) ** 2 + eta**2) * w[:, None], axis=0)
    second = c1 * eta / (om[0] ** 2 + eta**2) * (params.N - 2.0 / ELECTRON_MASS * corr)
    out = first + second
    return out if omega.ndim else float(out[0])


def sigma_leading_kernel_form(weights, eigs, omega, eta, params):
    """Same quantity through the odd kernel F: N eta/(w^2+eta^2) e^2/mS - e^2/m^2S sum F w."""
    omega = _check_freq(omega, eta)
    gaps, w = _gaps_and_weights(weights, eigs)
    om = np.atleast_1d(omega)
    c1, c2 = prefactors(params.geometry)
    F = lorentzian_kernel(gaps[:, None], om[None, :], eta)
    out = c1 * params.N * eta / (om**2 + eta**2) - c2 * np.sum(F * w[:, None], axis=0)
    return out if omega.ndim else float(out[0])


def _level_sums(mu, wmat, omega, eta, rows):
    """S_k(w) = sum_j F(mu_j - mu_k) w_jk for the requested initial states k."""
    out = np.empty((len(rows), len(omega)))
    for i, k in enumerate(rows):
        F = lorentzian_kernel((mu - mu[k])[:, None], omega[None, :], eta)
        out[i] = F.T @ wmat[:, k]
    return out


def _boltzmann(mu, beta):
    return np.exp(-beta * (mu - mu[0]))


def thermal_terms(res, weights, beta, omega, eta, tol=DEGENERACY_TOL):
    """Split of Tr(R P) into the ground-level part T0 and the excited remainder T1.

    Returns ``(T0, T1, Z)`` with ``Z`` the reduced partition function; both
    terms already carry the 1/Z normalization.
    """
    if weights.matrix is None:
        raise ValidationError("finite-beta conductivity needs the full weight matrix")
    omega = np.atleast_1d(_check_freq(omega, eta))
    mu = res.eigenvalues
    p = _boltzmann(mu, beta)
    Z = reduced_partition(res, beta)
    ground = res.ground_indices(tol)
    rows = np.flatnonzero(p > 0.0)
    S = _level_sums(mu, weights.matrix, omega, eta, rows)
    in_ground = np.isin(rows, ground)
    T0 = np.sum(S[in_ground] * p[rows][in_ground, None], axis=0) / Z
    T1 = np.sum(S[~in_ground] * p[rows][~in_ground, None], axis=0) / Z
    return T0, T1, Z


def sigma_finite_beta(res, weights, beta, omega, eta, params):
    """Exact thermal Kubo conductivity over the retained spectrum."""
    omega_arr = _check_freq(omega, eta)
    om = np.atleast_1d(omega_arr)
    T0, T1, _ = thermal_terms(res, weights, beta, om, eta)
    c1, c2 = prefactors(params.geometry)
    out = c1 * params.N * eta / (om**2 + eta**2) - c2 * (T0 + T1)
    return out if omega_arr.ndim else float(out[0])


def thermal_deviation(res, weights, beta, omega, eta, params, tol=DEGENERACY_TOL):
    """sigma(beta) - sigma_leading, evaluated without subtracting two O(1) numbers.

    With p_k the Boltzmann factors and S_g the ground-level mean of S_k the
    difference is -e^2/(m^2 S) sum_{k not ground} p_k (S_k - S_g) / Z.
    """
    if weights.matrix is None:
        raise ValidationError("finite-beta conductivity needs the full weight matrix")
    omega_arr = _check_freq(omega, eta)
    om = np.atleast_1d(omega_arr)
    mu = res.eigenvalues
    p = _boltzmann(mu, beta)
    Z = reduced_partition(res, beta)
    ground = res.ground_indices(tol)
    S_g = _level_sums(mu, weights.matrix, om, eta, ground).mean(axis=0)
    excited = np.setdiff1d(np.flatnonzero(p > 0.0), ground)
    S = _level_sums(mu, weights.matrix, om, eta, excited)
    _, c2 = prefactors(params.geometry)
    out = -c2 * np.sum(p[excited, None] * (S - S_g[None, :]), axis=0) / Z
    return out if omega_arr.ndim else float(out[0])


@dataclass(frozen=True, eq=False)
class LineSpectrum:
    """Zero-width absorption lines at w_k = mu_k - mu_0.

    Degenerate excited levels are merged into one line carrying the summed
    weight; ``k_index`` is the first eigenvalue index of each level.
    """

    omega: np.ndarray
    amplitude: np.ndarray
    k_index: np.ndarray
    weight: np.ndarray

    @property
    def lines(self):
        return list(zip(self.omega.tolist(), self.amplitude.tolist()))

    def __len__(self):
        return len(self.omega)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["omega_k", "amplitude", "k_index", "weight"])
            for om, amp, k, w in zip(self.omega, self.amplitude, self.k_index, self.weight):
                writer.writerow([_fmt(om), _fmt(amp), int(k), _fmt(w)])


def line_spectrum(weights, eigs, params, threshold=1e-14, tol=DEGENERACY_TOL):
    """Delta-peak limit of the leading term: amplitude pi e^2/(m^2 S) w_k / w_k.

    Lines whose (merged) weight is at or below ``threshold`` times the total
    ground-level weight ``<P^2>`` are dropped.
    """
    gaps, w = _gaps_and_weights(weights, eigs)
    scale = max(1.0, abs(eigs[0]))
    total = getattr(weights, "total", float(np.sum(w)))
    cut = threshold * max(total, 1e-300)
    omegas, amps, ks, ws = [], [], [], []
    k = 0
    n = len(gaps)
    while k < n and gaps[k] <= tol * scale:
        k += 1
    _, c2 = prefactors(params.geometry)
    while k < n:
        j = k
        while j + 1 < n and gaps[j + 1] - gaps[k] <= tol * scale:
            j += 1
        level_w = float(np.sum(w[k:j + 1]))
        om = float(np.mean(gaps[k:j + 1]))
        if level_w > cut:
            omegas.append(om)
            amps.append(math.pi * c2 * level_w / om)
            ks.append(k)
            ws.append(level_w)
        k = j + 1
    return LineSpectrum(np.array(omegas), np.array(amps), np.array(ks, dtype=np.int64),
                        np.array(ws))


def resonance_height(line_weight, omega_k, eta, params):
    """Peak value w/(eta w) e^2/(m^2 S) of an isolated line."""
    _, c2 = prefactors(params.geometry)
    return c2 * line_weight / (eta * omega_k)


def locate_peak(func, center, half_width, xatol=None):
    """Local maximum of a scalar function inside ``[center - h, center + h]``."""
    lo = max(center - half_width, 1e-300)
    hi = center + half_width
    xatol = xatol if xatol is not None else 1e-13 * max(1.0, center)
    opt = minimize_scalar(lambda x: -func(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": xatol, "maxiter": 500})
    return float(opt.x), float(-opt.fun)


def peak_positions(weights, eigs, eta, params, lines=None, window=3.0):
    """Maxima of ``sigma_leading`` next to each line, searched within ``window * eta``.

    The window is clipped to half the distance to neighbouring lines.
    """
    lines = lines if lines is not None else line_spectrum(weights, eigs, params)
    out = []
    om = lines.omega
    for i, c in enumerate(om):
        h = window * eta
        if i > 0:
            h = min(h, 0.5 * (c - om[i - 1]))
        if i + 1 < len(om):
            h = min(h, 0.5 * (om[i + 1] - c))
        h = min(h, 0.5 * c)
        out.append(locate_peak(lambda x: sigma_leading(weights, eigs, x, eta, params), c, h))
    return out


def omega_grid(w_min, w_max, count, spacing="linear"):
    if not 0.0 < w_min <= w_max or count < 1:
        raise ValidationError("omega grid needs 0 < min <= max and count >= 1")
    if count == 1:
        return np.array([float(w_min)])
    if spacing == "log":
        return np.geomspace(w_min, w_max, count)
    if spacing == "linear":
        return np.linspace(w_min, w_max, count)
    raise ValidationError(f"unknown grid spacing {spacing!r}")


def _fmt(x):
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class ConductivityCurve:
    omega_grid: np.ndarray
    values: np.ndarray
    eta: float
    beta: Optional[float] = None
    model_hash: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.omega_grid) != len(self.values):
            raise ValidationError("omega grid and values differ in length")
        if not self.eta > 0:
            raise ValidationError("eta must be > 0")
        if np.any(np.asarray(self.omega_grid) <= 0):
            raise ValidationError("all frequencies must be > 0")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["omega", "sigma"])
            for om, s in zip(self.omega_grid, self.values):
                writer.writerow([_fmt(om), _fmt(s)])

    def metadata(self):
        return {"model_hash": self.model_hash, "eta": self.eta, "beta": self.beta,
                "diagnostics": self.diagnostics}

    def write_metadata(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")
