"""Eigensolver front end, dipole weights, partition function and Weyl fit."""
import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, SwntError

DENSE_THRESHOLD = 2000
DEGENERACY_TOL = 1e-10


class InsufficientDataError(SwntError, ValueError):
    """Too few eigenvalues for the requested fit."""


@dataclass(frozen=True, eq=False)
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_converged: int
    residuals: np.ndarray
    dim: int

    @property
    def complete(self):
        """True when every eigenpair of the matrix is present."""
        return self.n_converged == self.dim

    def ground_indices(self, tol=DEGENERACY_TOL):
        mu = self.eigenvalues
        return np.flatnonzero(mu - mu[0] <= tol * max(1.0, abs(mu[0])))

    def ground_degeneracy(self, tol=DEGENERACY_TOL):
        return len(self.ground_indices(tol))

    def gap(self, tol=DEGENERACY_TOL):
        """Distance from the ground level to the first distinct level above it."""
        g = self.ground_degeneracy(tol)
        if g >= self.n_converged:
            raise InsufficientDataError("no converged level above the ground manifold")
        return float(self.eigenvalues[g] - self.eigenvalues[0])

    def shifted(self, constant):
        return SpectralResult(self.eigenvalues + constant, self.eigenvectors,
                              self.n_converged, self.residuals, self.dim)

    def orthonormality_error(self):
        V = self.eigenvectors
        return float(np.max(np.abs(V.conj().T @ V - np.eye(V.shape[1]))))


def _as_operator(H):
    if hasattr(H, "entries"):
        return H.entries
    return H


def eigensolve(H, k_lowest=None, tol=1e-9, dense_threshold=DENSE_THRESHOLD):
    """Lowest ``k_lowest`` eigenpairs (all of them when ``None`` on the dense path).

    Matrices up to ``dense_threshold`` go to LAPACK; larger ones use implicitly
    restarted Lanczos (ARPACK, smallest algebraic).  Residual norms
    ``|H psi - mu psi|`` are always recomputed and compared with
    ``tol * max(1, |mu|)``.
    """
    A = _as_operator(H)
    dim = A.shape[0]
    k = dim if k_lowest is None else int(k_lowest)
    if not 1 <= k <= dim:
        raise ValueError(f"k_lowest must be in [1, {dim}]")
    if dim <= dense_threshold:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        mu, V = la.eigh(dense, subset_by_index=[0, k - 1])
    else:
        if k_lowest is None:
            raise ValueError("k_lowest is required above the dense threshold")
        if k >= dim - 1:
            raise ValueError("iterative path needs k_lowest < dim - 1")
        A = sp.csr_matrix(A)
        ncv = min(dim, max(2 * k + 1, 40))
        try:
            mu, V = spla.eigsh(A, k=k, which="SA", tol=tol * 1e-2, ncv=ncv)
        except spla.ArpackNoConvergence as exc:
            mu, V = exc.eigenvalues, exc.eigenvectors
            order = np.argsort(mu)
            partial = SpectralResult(mu[order], V[:, order], len(mu),
                                     _residuals(A, mu[order], V[:, order]), dim)
            raise ConvergenceError(f"Lanczos converged {len(mu)} of {k} eigenpairs", partial)
        order = np.argsort(mu)
        mu, V = mu[order], V[:, order]
    res = _residuals(A, mu, V)
    out = SpectralResult(mu, V, len(mu), res, dim)
    bad = res > tol * np.maximum(1.0, np.abs(mu))
    if np.any(bad):
        raise ConvergenceError(
            f"{int(bad.sum())} eigenpairs exceed residual tolerance (max {res.max():.2e})", out
        )
    return out


def _residuals(A, mu, V):
    return np.linalg.norm(A @ V - V * mu, axis=0)


@dataclass(frozen=True, eq=False)
class DipoleWeights:
    """Squared momentum matrix elements against the ground manifold.

    ``w[k]`` is |<psi_k, P psi_0>|^2 averaged over an orthonormal basis of the
    (possibly degenerate) ground level.  ``matrix`` holds |<psi_j, P psi_k>|^2
    for all retained pairs when requested.  ``total`` is <P^2> in the ground
    level, so ``total - w.sum()`` is the weight carried by discarded states.
    """

    w: np.ndarray
    ground: np.ndarray
    total: float
    matrix: Optional[np.ndarray] = None

    @property
    def tail(self):
        return max(0.0, self.total - float(np.sum(self.w)))


def momentum_in_eigenbasis(res, P):
    P = np.asarray(P)
    if P.ndim == 1:
        PV = P[:, None] * res.eigenvectors
    else:
        PV = P @ res.eigenvectors
    return res.eigenvectors.conj().T @ PV, PV


def dipole_weights(res, P, full=False, tol=DEGENERACY_TOL):
    if res.n_converged < 1:
        raise ValueError("need at least one converged eigenpair")
    Pm, PV = momentum_in_eigenbasis(res, P)
    ground = res.ground_indices(tol)
    w = np.mean(np.abs(Pm[:, ground]) ** 2, axis=1)
    total = float(np.mean(np.sum(np.abs(PV[:, ground]) ** 2, axis=0)))
    matrix = np.abs(Pm) ** 2 if full else None
    return DipoleWeights(w, ground, total, matrix)


def reduced_partition(res, beta, tail_tol=1e-12):
    """Sum of exp(-beta (mu_k - mu_0)) over the retained levels."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    x = np.exp(-beta * (res.eigenvalues - res.eigenvalues[0]))
    if not res.complete and x[-1] > tail_tol:
        warnings.warn(
            f"partition function truncated: last Boltzmann factor {x[-1]:.2e} > {tail_tol:.0e}"
        )
    return float(np.sum(x))


@dataclass(frozen=True)
class WeylFit:
    exponent: float
    prefactor: float
    k_range: tuple


def weyl_fit(res, N, n_clean=None, edge=None, min_points=50):
    """Fit mu_k - mu_0 ~ C0 k^alpha on the upper half of the clean window.

    The window holds the lowest eigenvalues unaffected by the momentum
    cutoff: the first ``n_clean`` of them, or those below the truncation
    ``edge`` energy; by default all converged ones.  Returns the fitted
    exponent (compare with 2/N) and prefactor C0.
    """
    n = res.n_converged if n_clean is None else min(int(n_clean), res.n_converged)
    if edge is not None:
        n = min(n, int(np.searchsorted(res.eigenvalues[:res.n_converged], edge)))
    if n < min_points:
        raise InsufficientDataError(f"Weyl fit needs >= {min_points} clean eigenvalues, have {n}")
    k = np.arange(n // 2, n)
    e = res.eigenvalues[k] - res.eigenvalues[0]
    keep = e > 0
    k, e = k[keep], e[keep]
    slope, intercept = np.polyfit(np.log(k), np.log(e), 1)
    return WeylFit(float(slope), float(math.exp(intercept)), (int(k[0]), int(k[-1])))


def spectrum_for_conductivity(H, P, tail_rel=1e-8, k_start=64, tol=1e-9,
                              dense_threshold=DENSE_THRESHOLD):
    """Eigensolve, widening the window until the dipole-weight tail is negligible."""
    A = _as_operator(H)
    dim = A.shape[0]
    if dim <= dense_threshold:
        res = eigensolve(H, None, tol, dense_threshold)
        return res, dipole_weights(res, P, full=True)
    k = min(k_start, dim - 2)
    while True:
        res = eigensolve(H, k, tol, dense_threshold)
        weights = dipole_weights(res, P, full=True)
        if weights.tail <= tail_rel * weights.total or k >= dim - 2:
            return res, weights
        k = min(2 * k, dim - 2)


def write_spectrum_csv(path, res, weights):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mu_k", "w_k", "residual"])
        for k in range(res.n_converged):
            writer.writerow([k, format(float(res.eigenvalues[k]), ".17g"),
                             format(float(weights.w[k]), ".17g"),
                             format(float(res.residuals[k]), ".17g")])
