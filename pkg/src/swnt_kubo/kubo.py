"""Time-domain Kubo oracle: driven Liouville-von Neumann propagation.

The field enters through the vector potential

    a(t) = Re(exp((i w + eta) t) / (i w + eta)),   a'(t) = exp(eta t) cos(w t),

and H(t) = H0 - (e/m) E a(t) P + (e^2/2m) N E^2 a(t)^2.  The scalar term drops
out of the evolution and only shifts the current.  Everything runs in the
eigenbasis of H0, where exp(-i H0 t) is diagonal.

The default stepper writes the thermal state as a mixture of H0 eigenstates
and advances each one in the interaction picture with the exponential
midpoint rule; the only non-trivial factor is exp(i (e/m) E a dt P), applied
in the eigenbasis of P.  Several field amplitudes share one pass.
"""
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._accel import USE_NUMBA, njit
from .conductivity import ELECTRON_MASS
from .errors import ConsistencyError, StabilityError, ValidationError

START_TOL = 1e-8
POPULATION_TOL = 1e-16
TRACE_TOL = 1e-8


@dataclass(frozen=True)
class DriveSpec:
    E: float
    omega: float
    eta: float
    t_start: Optional[float] = None

    def __post_init__(self):
        if not -1.0 <= self.E <= 1.0:
            raise ValidationError("field amplitude must lie in [-1, 1]")
        if not self.omega > 0 or not self.eta > 0:
            raise ValidationError("omega and eta must be > 0")
        if self.t_start is None:
            object.__setattr__(self, "t_start", math.log(START_TOL) / self.eta)
        if not self.t_start < 0:
            raise ValidationError("t_start must be negative")
        if math.exp(self.eta * self.t_start) > START_TOL * (1 + 1e-12):
            raise ValidationError(
                f"adiabatic tail exp(eta t_start) = {math.exp(self.eta * self.t_start):.2e} "
                f"exceeds {START_TOL:.0e}"
            )


def vector_potential(t, omega, eta):
    """Return ``(a(t), a'(t))``; works elementwise on arrays."""
    t = np.asarray(t, dtype=float)
    env = np.exp(eta * t)
    a = env * (eta * np.cos(omega * t) + omega * np.sin(omega * t)) / (omega**2 + eta**2)
    da = env * np.cos(omega * t)
    if t.ndim == 0:
        return float(a), float(da)
    return a, da


def _as_dense(M):
    if hasattr(M, "toarray"):
        return M.toarray()
    return np.asarray(M)


def _as_matrix(P, dim):
    P = np.asarray(P) if not hasattr(P, "toarray") else P.toarray()
    if P.ndim == 1:
        if P.shape[0] != dim:
            raise ConsistencyError("P and H0 act on different spaces")
        return np.diag(P)
    if P.shape != (dim, dim):
        raise ConsistencyError("P and H0 act on different spaces")
    return P


def driven_hamiltonian(H0, P, N, drive, t, charge=1.0):
    """H0 - (e/m) E a(t) P + (e^2/2m) N E^2 a(t)^2 as a dense matrix."""
    H0 = _as_dense(getattr(H0, "entries", H0))
    Pm = _as_matrix(P, H0.shape[0])
    a, _ = vector_potential(t, drive.omega, drive.eta)
    coef = charge * drive.E * a / ELECTRON_MASS
    shift = charge**2 * N * (drive.E * a) ** 2 / (2.0 * ELECTRON_MASS)
    return H0 - coef * Pm + shift * np.eye(H0.shape[0])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    rho: np.ndarray
    beta: float
    t: float

    def trace_error(self):
        return abs(np.trace(self.rho).real - 1.0)

    def hermiticity_error(self):
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))[0])

    def spectrum(self):
        return np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))


@dataclass(frozen=True, eq=False)
class KuboSystem:
    """H0 eigenbasis data shared by all trajectories.

    ``P_eig`` is the momentum operator in the H0 eigenbasis; ``p`` and ``W``
    are its eigenvalues and eigenvectors (``P_eig = W diag(p) W^H``).
    """

    mu: np.ndarray
    P_eig: np.ndarray
    p: np.ndarray
    W: np.ndarray
    N: int
    charge: float = 1.0
    area: float = 1.0

    @classmethod
    def from_spectrum(cls, res, P, N, geometry=None, charge=None, area=None):
        if not res.complete:
            raise ValidationError("time-domain oracle needs the complete eigenbasis")
        V = res.eigenvectors
        P = np.asarray(P) if not hasattr(P, "toarray") else P.toarray()
        if P.shape[0] != res.dim:
            raise ConsistencyError("P and the spectrum act on different spaces")
        if P.ndim == 1:
            P_eig = V.conj().T @ (P[:, None] * V)
            p = P.astype(float)
            W = V.conj().T
        else:
            P_eig = V.conj().T @ P @ V
            p, Q = np.linalg.eigh(P)
            W = V.conj().T @ Q
        if geometry is not None:
            charge = geometry.charge if charge is None else charge
            area = geometry.area if area is None else area
        return cls(res.eigenvalues.copy(), P_eig, p, W, int(N),
                   1.0 if charge is None else charge, 1.0 if area is None else area)

    @classmethod
    def from_matrices(cls, H0, P, N, charge=1.0, area=1.0):
        """Small dense systems (toy models): diagonalize H0 directly."""
        H0 = _as_dense(H0)
        Pm = _as_matrix(P, H0.shape[0])
        mu, V = np.linalg.eigh(H0)
        P_eig = V.conj().T @ Pm @ V
        p, Q = np.linalg.eigh(Pm)
        return cls(mu, P_eig, p, V.conj().T @ Q, int(N), charge, area)

    @property
    def dim(self):
        return len(self.mu)

    def max_gap(self):
        return float(self.mu[-1] - self.mu[0])

    def populations(self, beta):
        x = np.exp(-beta * (self.mu - self.mu[0]))
        return x / x.sum()

    def equilibrium(self, beta):
        return DensityMatrix(np.diag(self.populations(beta)).astype(complex), beta, -np.inf)


def default_dt(system, drive, resolution=0.1):
    """Largest step with dt * max gap <= resolution and dt * omega <= resolution."""
    scale = max(system.max_gap(), drive.omega, 1e-300)
    n = math.ceil(-drive.t_start * scale / resolution)
    return -drive.t_start / n


@njit(nogil=True)
def _midpoint_kernel(Wr, Wi, complex_w, mu, p, theta, X0r, X0i, Dr, Di, t0, dt, n_steps,
                     omega, eta, stride, record):
    """Advance interaction-picture columns X = X0 + D from t0 to t0 + n_steps dt.

    Only the deviation D from the initial columns X0 is updated (in place):
    each step adds (U - 1) X with U - 1 built from expm1 of the phases, so
    rounding scales with the field-induced change instead of with |X| = 1.
    ``theta[c]`` is (e/m) E_c dt for column c.  When ``stride > 0`` the
    Schrodinger-picture <P> of every column is written to ``record`` at each
    multiple of ``stride`` steps.
    """
    dim, ncol = Dr.shape
    WrT = np.ascontiguousarray(Wr.T)
    WiT = np.ascontiguousarray(Wi.T)
    denom = omega * omega + eta * eta
    Ar = np.empty((dim, ncol))
    Ai = np.empty((dim, ncol))
    for n in range(n_steps):
        tm = t0 + (n + 0.5) * dt
        a = math.exp(eta * tm) * (eta * math.cos(omega * tm) + omega * math.sin(omega * tm)) / denom
        c = np.cos(mu * tm)
        s = np.sin(mu * tm)
        for i in range(dim):
            for j in range(ncol):
                xr = X0r[i, j] + Dr[i, j]
                xi = X0i[i, j] + Di[i, j]
                Ar[i, j] = c[i] * xr + s[i] * xi
                Ai[i, j] = c[i] * xi - s[i] * xr
        if complex_w:
            Yr = WrT @ Ar + WiT @ Ai
            Yi = WrT @ Ai - WiT @ Ar
        else:
            Yr = WrT @ Ar
            Yi = WrT @ Ai
        for i in range(dim):
            for j in range(ncol):
                ph = theta[j] * a * p[i]
                sh = math.sin(0.5 * ph)
                cm = -2.0 * sh * sh
                sp = math.sin(ph)
                yr = Yr[i, j]
                yi = Yi[i, j]
                Yr[i, j] = cm * yr - sp * yi
                Yi[i, j] = cm * yi + sp * yr
        if complex_w:
            Br = Wr @ Yr - Wi @ Yi
            Bi = Wr @ Yi + Wi @ Yr
        else:
            Br = Wr @ Yr
            Bi = Wr @ Yi
        for i in range(dim):
            for j in range(ncol):
                Dr[i, j] += c[i] * Br[i, j] - s[i] * Bi[i, j]
                Di[i, j] += c[i] * Bi[i, j] + s[i] * Br[i, j]
        if stride > 0 and (n + 1) % stride == 0:
            t = t0 + (n + 1) * dt
            c2 = np.cos(mu * t)
            s2 = np.sin(mu * t)
            for i in range(dim):
                for j in range(ncol):
                    xr = X0r[i, j] + Dr[i, j]
                    xi = X0i[i, j] + Di[i, j]
                    Ar[i, j] = c2[i] * xr + s2[i] * xi
                    Ai[i, j] = c2[i] * xi - s2[i] * xr
            if complex_w:
                Yr = WrT @ Ar + WiT @ Ai
                Yi = WrT @ Ai - WiT @ Ar
            else:
                Yr = WrT @ Ar
                Yi = WrT @ Ai
            row = (n + 1) // stride - 1
            for j in range(ncol):
                acc = 0.0
                for i in range(dim):
                    acc += p[i] * (Yr[i, j] ** 2 + Yi[i, j] ** 2)
                record[row, j] = acc


def _midpoint_numpy(Wr, Wi, complex_w, mu, p, theta, X0r, X0i, Dr, Di, t0, dt, n_steps,
                    omega, eta, stride, record):
    """Vectorized twin of :func:`_midpoint_kernel` for runs without numba."""
    W = Wr + 1j * Wi if complex_w else Wr
    WH = W.conj().T
    X0 = X0r + 1j * X0i
    D = Dr + 1j * Di
    denom = omega * omega + eta * eta
    for n in range(n_steps):
        tm = t0 + (n + 0.5) * dt
        a = math.exp(eta * tm) * (eta * math.cos(omega * tm) + omega * math.sin(omega * tm)) / denom
        R = np.exp(-1j * mu * tm)[:, None]
        ph = np.multiply.outer(p, theta) * a
        U1 = -2.0 * np.sin(0.5 * ph) ** 2 + 1j * np.sin(ph)
        D += R.conj() * (W @ (U1 * (WH @ (R * (X0 + D)))))
        if stride > 0 and (n + 1) % stride == 0:
            Y = WH @ (np.exp(-1j * mu * (t0 + (n + 1) * dt))[:, None] * (X0 + D))
            record[(n + 1) // stride - 1] = p @ np.abs(Y) ** 2
    Dr[...] = D.real
    Di[...] = D.imag


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at t = 0 for every (field amplitude, initial eigenstate) column."""

    fields: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    dropped_population: float
    dt: float
    n_steps: int
    norm_drift: float
    times: Optional[np.ndarray] = None
    expect_P: Optional[np.ndarray] = None

    def density(self, field_index, beta):
        """Density matrix at t = 0 in the H0 eigenbasis for one field amplitude."""
        X = self.states[field_index]
        rho = (X * self.weights[None, :]) @ X.conj().T
        return DensityMatrix(rho, beta, 0.0)


def _propagate_midpoint(system, beta, fields, omega, eta, t_start, dt, record_stride=0):
    probs = system.populations(beta)
    keep = np.flatnonzero(probs > POPULATION_TOL * probs[0])
    weights = probs[keep]
    dropped = float(probs.sum() - weights.sum())
    weights = weights / weights.sum()
    n_steps = int(round(-t_start / dt))
    fields = np.asarray(fields, dtype=float)
    nk = len(keep)
    ncol = nk * len(fields)
    Xr = np.zeros((system.dim, ncol))
    Xi = np.zeros((system.dim, ncol))
    theta = np.empty(ncol)
    for f, E in enumerate(fields):
        for i, k in enumerate(keep):
            Xr[k, f * nk + i] = 1.0
            theta[f * nk + i] = system.charge * E * dt / ELECTRON_MASS
    W = np.asarray(system.W)
    complex_w = bool(np.iscomplexobj(W) and np.any(W.imag != 0.0))
    Wr = np.ascontiguousarray(W.real, dtype=float)
    Wi = np.ascontiguousarray(W.imag if np.iscomplexobj(W) else np.zeros_like(Wr), dtype=float)
    n_rec = n_steps // record_stride if record_stride > 0 else 0
    record = np.zeros((max(n_rec, 1), ncol))
    Dr = np.zeros_like(Xr)
    Di = np.zeros_like(Xi)
    kernel = _midpoint_kernel if USE_NUMBA else _midpoint_numpy
    kernel(Wr, Wi, complex_w, np.ascontiguousarray(system.mu, dtype=float),
           np.ascontiguousarray(system.p, dtype=float), theta, Xr, Xi, Dr, Di,
           float(t_start), float(dt), n_steps, float(omega), float(eta),
           int(record_stride), record)
    X = (Xr + Dr) + 1j * (Xi + Di)
    drift = float(np.max(np.abs(np.sum(np.abs(X) ** 2, axis=0) - 1.0)))
    if drift > TRACE_TOL:
        raise StabilityError(f"norm drift {drift:.2e} exceeds {TRACE_TOL:.0e}; reduce dt")
    states = np.stack([X[:, f * nk:(f + 1) * nk] for f in range(len(fields))])
    times = expect = None
    if n_rec:
        times = t_start + dt * record_stride * np.arange(1, n_rec + 1)
        expect = np.stack([record[:n_rec, f * nk:(f + 1) * nk] @ weights
                           for f in range(len(fields))])
    return Trajectory(fields, states, weights, dropped, dt, n_steps, drift, times, expect)


def _propagate_rk4(system, beta, drive, dt):
    rho = np.diag(system.populations(beta)).astype(complex)
    n_steps = int(round(-drive.t_start / dt))
    mu = system.mu
    coef = system.charge * drive.E / ELECTRON_MASS

    def rhs(t, r):
        a, _ = vector_potential(t, drive.omega, drive.eta)
        H = np.diag(mu) - coef * a * system.P_eig
        return -1j * (H @ r - r @ H)

    # commutator stages keep the trace exact even when RK4 diverges, so the
    # purity Tr(rho^2), conserved by unitary evolution, is monitored as well
    purity0 = float(np.sum(np.abs(rho) ** 2))
    t = drive.t_start
    for _ in range(n_steps):
        k1 = rhs(t, rho)
        k2 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k2)
        k4 = rhs(t + dt, rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
        drift = max(abs(np.trace(rho).real - 1.0),
                    abs(float(np.sum(np.abs(rho) ** 2)) - purity0))
        if not drift <= TRACE_TOL:
            raise StabilityError(f"trace or purity drift {drift:.2e} exceeds {TRACE_TOL:.0e}")
    return DensityMatrix(rho, beta, 0.0)


def propagate_density(system, beta, drive, dt=None, scheme="midpoint"):
    """rho(0) from the thermal state at ``drive.t_start``, in the H0 eigenbasis."""
    if not beta > 0:
        raise ValidationError("beta must be positive")
    dt = default_dt(system, drive) if dt is None else float(dt)
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if scheme == "midpoint":
        traj = _propagate_midpoint(system, beta, [drive.E], drive.omega, drive.eta,
                                   drive.t_start, dt)
        return traj.density(0, beta)
    if scheme == "rk4":
        return _propagate_rk4(system, beta, drive, dt)
    raise ValidationError(f"unknown scheme {scheme!r}")


def current_density(rho, P_eig, N, drive, t, charge=1.0, area=1.0):
    """J = -(e/(m S)) [Tr(rho P) - N e E a(t) Tr rho]."""
    rho_m = rho.rho if isinstance(rho, DensityMatrix) else np.asarray(rho)
    P_eig = _as_matrix(P_eig, rho_m.shape[0])
    a, _ = vector_potential(t, drive.omega, drive.eta)
    tr_rho = np.trace(rho_m).real
    tr_rp = np.trace(rho_m @ P_eig).real
    return -charge / (ELECTRON_MASS * area) * (tr_rp - N * charge * drive.E * a * tr_rho)


def _expect_P(traj, system, field_index):
    X = traj.states[field_index]
    Y = system.W.conj().T @ X
    return float(np.sum(traj.weights * np.sum(system.p[:, None] * np.abs(Y) ** 2, axis=0)))


def _current_at_zero(traj, system, field_index, E, omega, eta):
    a0 = eta / (omega**2 + eta**2)
    tr_rp = _expect_P(traj, system, field_index)
    return -system.charge / (ELECTRON_MASS * system.area) * (
        tr_rp - system.N * system.charge * E * a0
    )


@dataclass(frozen=True)
class OracleResult:
    sigma: dict
    dt: float
    n_steps: int
    t_start: float
    norm_drift: float
    dropped_population: float
    coarse: Optional[dict] = None


def time_domain_conductivity(system, beta, omega, eta, E_steps=(1e-4,), dt=None,
                             t_start=None, trajectory_path=None, record_stride=0,
                             richardson=False):
    """Central-difference conductivity [J(+E) - J(-E)] / 2E for every E in ``E_steps``.

    All +-E trajectories share one propagation pass.  With ``trajectory_path``
    the run also writes (t, Tr(rho P), J) for the first +E column every
    ``record_stride`` steps (default: about 2000 rows).  ``richardson`` repeats
    the pass at dt/2 and combines (4 s(dt/2) - s(dt)) / 3, removing the
    second-order midpoint error; the dt result is kept in ``coarse``.
    """
    if richardson:
        first = time_domain_conductivity(system, beta, omega, eta, E_steps, dt, t_start)
        fine = time_domain_conductivity(system, beta, omega, eta, E_steps, 0.5 * first.dt,
                                        t_start, trajectory_path, record_stride)
        sigma = {E: (4.0 * fine.sigma[E] - first.sigma[E]) / 3.0 for E in fine.sigma}
        return OracleResult(sigma, fine.dt, fine.n_steps, fine.t_start,
                            max(first.norm_drift, fine.norm_drift),
                            fine.dropped_population, first.sigma)
    E_steps = [float(E) for E in E_steps]
    if any(not 0 < E <= 1 for E in E_steps):
        raise ValidationError("E steps must lie in (0, 1]")
    drive = DriveSpec(E_steps[0], omega, eta, t_start)
    dt = default_dt(system, drive) if dt is None else float(dt)
    fields = [s * E for E in E_steps for s in (1.0, -1.0)]
    stride = 0
    if trajectory_path is not None:
        n_steps = int(round(-drive.t_start / dt))
        stride = record_stride or max(1, n_steps // 2000)
    traj = _propagate_midpoint(system, beta, fields, omega, eta, drive.t_start, dt, stride)
    sigma = {}
    for i, E in enumerate(E_steps):
        jp = _current_at_zero(traj, system, 2 * i, E, omega, eta)
        jm = _current_at_zero(traj, system, 2 * i + 1, -E, omega, eta)
        sigma[E] = (jp - jm) / (2.0 * E)
    if trajectory_path is not None:
        _write_trajectory(trajectory_path, traj, system, E_steps[0], omega, eta)
    return OracleResult(sigma, dt, traj.n_steps, drive.t_start, traj.norm_drift,
                        traj.dropped_population)


def finite_difference_conductivity(system, beta, omega, eta, E_step=1e-4, dt=None,
                                   richardson=False):
    """sigma_hat = [J(0; +E) - J(0; -E)] / (2 E)."""
    return time_domain_conductivity(system, beta, omega, eta, (E_step,), dt,
                                    richardson=richardson).sigma[E_step]


def _write_trajectory(path, traj, system, E, omega, eta):
    a, _ = vector_potential(traj.times, omega, eta)
    trp = traj.expect_P[0]
    J = -system.charge / (ELECTRON_MASS * system.area) * (trp - system.N * system.charge * E * a)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "tr_rho_P", "J"])
        for row in zip(traj.times, trp, J):
            writer.writerow([format(float(x), ".17g") for x in row])
