"""Spinless N-fermion plane-wave basis and the effective Hamiltonian.

Single-particle modes ``n in [-M, M]`` are stored as bits ``n + M`` of an
int64 occupation mask.  A configuration ``{s_1 < ... < s_N}`` stands for
``c+_{s_1} ... c+_{s_N} |0>``; fermionic signs follow from counting occupied
modes below the one being created or destroyed.
"""
import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._accel import njit
from .errors import CapacityError, ConsistencyError, ValidationError
from .potentials import CylinderGeometry, PairKernelTable, PeriodicPotentialSpec

MAX_MODES_CUTOFF = 31
DEFAULT_MAX_DIM = 2_000_000


@dataclass(frozen=True)
class ModelParams:
    geometry: CylinderGeometry
    N: int
    lam: float
    v_per: PeriodicPotentialSpec = field(default_factory=PeriodicPotentialSpec)
    M_modes: int = 6

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N must be a positive integer (got {self.N})")
        if int(self.M_modes) != self.M_modes or self.M_modes < 0:
            raise ValidationError("M_modes must be a non-negative integer")
        if self.M_modes > MAX_MODES_CUTOFF:
            raise ValidationError(f"M_modes <= {MAX_MODES_CUTOFF} (64-bit occupation masks)")
        if self.N > 2 * self.M_modes + 1:
            raise ValidationError(
                f"N={self.N} fermions do not fit in {2 * self.M_modes + 1} modes"
            )
        if not self.lam >= 0:
            raise ValidationError("coupling lambda must be non-negative")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "M_modes", int(self.M_modes))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n_modes(self):
        return 2 * self.M_modes + 1

    @property
    def dk(self):
        return 2.0 * math.pi / self.geometry.length

    def sector_modulus(self):
        """0 when total momentum is conserved exactly, else the lattice period L."""
        return 0 if self.v_per.is_free else self.geometry.L


def particle_number_from_lattice(L, r, b, n0):
    """Electron count from L periods, circumference 2 pi r = l b and n0 ions per cell."""
    value = L * (2.0 * math.pi * r / b) * n0
    N = int(round(value))
    if abs(value - N) > 1e-9:
        warnings.warn(f"lattice data give non-integral N={value:.6g}; rounded to {N}")
    if N < 1:
        raise ValidationError("lattice data give no electrons")
    return N


@dataclass(frozen=True, eq=False)
class SlaterBasis:
    M_modes: int
    N: int
    masks: np.ndarray
    sector: Optional[int] = None
    modulus: int = 0

    def __post_init__(self):
        order = np.argsort(self.masks, kind="stable")
        object.__setattr__(self, "_order", order.astype(np.int64))
        object.__setattr__(self, "_sorted", np.ascontiguousarray(self.masks[order]))

    @property
    def dim(self):
        return len(self.masks)

    def occupations(self, i):
        """Sorted mode indices n of configuration ``i``."""
        mask = int(self.masks[i])
        return tuple(b - self.M_modes for b in range(2 * self.M_modes + 1) if mask >> b & 1)

    @property
    def configs(self):
        return [self.occupations(i) for i in range(self.dim)]

    def index(self, occupied):
        mask = 0
        for n in occupied:
            mask |= 1 << (int(n) + self.M_modes)
        pos = np.searchsorted(self._sorted, mask)
        if pos >= self.dim or self._sorted[pos] != mask:
            raise KeyError(occupied)
        return int(self._order[pos])

    def total_momentum_index(self):
        """Integer sum of occupied mode indices per configuration."""
        return np.array([sum(self.occupations(i)) for i in range(self.dim)], dtype=np.int64)


def _crystal_momentum(total, modulus):
    return total % modulus if modulus else total


def build_basis(params, sector=None, max_dim=DEFAULT_MAX_DIM):
    """All N-subsets of the truncated modes in lexicographic order.

    ``sector`` selects configurations by total mode index, reduced modulo L
    when a periodic potential is present.
    """
    n_modes = params.n_modes
    dim = math.comb(n_modes, params.N)
    if dim > max_dim:
        raise CapacityError(f"basis dimension {dim} exceeds budget {max_dim}")
    modulus = params.sector_modulus()
    if sector is not None:
        sector = _crystal_momentum(int(sector), modulus)
    M = params.M_modes
    masks = []
    for combo in itertools.combinations(range(n_modes), params.N):
        if sector is not None:
            total = sum(combo) - params.N * M
            if _crystal_momentum(total, modulus) != sector:
                continue
        mask = 0
        for bit in combo:
            mask |= 1 << bit
        masks.append(mask)
    masks = np.array(masks, dtype=np.int64)
    return SlaterBasis(M, params.N, masks, sector, modulus)


@njit
def _bits_below(mask, pos):
    x = mask & ((np.int64(1) << pos) - 1)
    count = 0
    while x:
        x &= x - 1
        count += 1
    return count


@njit
def _lookup(sorted_masks, order, mask):
    lo = 0
    hi = sorted_masks.size
    while lo < hi:
        mid = (lo + hi) // 2
        if sorted_masks[mid] < mask:
            lo = mid + 1
        else:
            hi = mid
    if lo < sorted_masks.size and sorted_masks[lo] == mask:
        return order[lo]
    return -1


@njit
def _assemble(masks, sorted_masks, order, n_modes, kinetic, diag_const,
              shifts, shift_amps, pair, lam):
    dim = masks.size
    one = np.int64(1)
    M2 = (pair.size - 1) // 2
    rows = []
    cols = []
    vals = []
    occ = np.empty(n_modes, dtype=np.int64)
    for i in range(dim):
        mask = masks[i]
        nocc = 0
        for b in range(n_modes):
            if (mask >> b) & 1:
                occ[nocc] = b
                nocc += 1
        e = diag_const
        for t in range(nocc):
            e += kinetic[occ[t]]
        rows.append(i)
        cols.append(i)
        vals.append(e)
        # one-body: c+_{p+d} c_p
        for t in range(nocc):
            p = occ[t]
            for s in range(shifts.size):
                q = p + shifts[s]
                if q < 0 or q >= n_modes:
                    continue
                m1 = mask ^ (one << p)
                if (m1 >> q) & 1:
                    continue
                sign = 1 - 2 * ((_bits_below(mask, p) + _bits_below(m1, q)) & 1)
                j = _lookup(sorted_masks, order, m1 | (one << q))
                if j >= 0:
                    rows.append(j)
                    cols.append(i)
                    vals.append(sign * shift_amps[s])
        if lam == 0.0:
            continue
        # two-body: (lam/2) coeff_m c+_{p+m} c+_{q-m} c_q c_p over ordered pairs p != q
        for t1 in range(nocc):
            p = occ[t1]
            m1 = mask ^ (one << p)
            par1 = _bits_below(mask, p)
            for t2 in range(nocc):
                if t2 == t1:
                    continue
                q = occ[t2]
                m2 = m1 ^ (one << q)
                par2 = par1 + _bits_below(m1, q)
                for m in range(-M2, M2 + 1):
                    pn = p + m
                    qn = q - m
                    if pn < 0 or pn >= n_modes or qn < 0 or qn >= n_modes or pn == qn:
                        continue
                    if (m2 >> qn) & 1:
                        continue
                    m3 = m2 | (one << qn)
                    if (m3 >> pn) & 1:
                        continue
                    par = par2 + _bits_below(m2, qn) + _bits_below(m3, pn)
                    j = _lookup(sorted_masks, order, m3 | (one << pn))
                    if j >= 0:
                        rows.append(j)
                        cols.append(i)
                        vals.append((1 - 2 * (par & 1)) * 0.5 * lam * pair[m + M2])
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    dim: int
    entries: sp.csr_matrix
    basis: SlaterBasis = field(repr=False)

    def toarray(self):
        return self.entries.toarray()

    def hermiticity_error(self):
        diff = self.entries - self.entries.T.conj()
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def to_coo_csv(self, path):
        coo = self.entries.tocoo()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "value"])
            for i, j, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
                writer.writerow([i, j, format(v, ".17g")])


def kinetic_energies(params):
    n = np.arange(-params.M_modes, params.M_modes + 1)
    return 0.5 * (n * params.dk) ** 2


def assemble_hamiltonian(params, basis, kernel):
    """Matrix of the effective Hamiltonian in ``basis``.

    Kinetic energy is diagonal; each cosine harmonic ``c_j`` of the ion
    potential couples mode n to n +- jL with amplitude c_j / 2; the pair term
    scatters (p, q) -> (p + m, q - m) with the Fourier coefficient of v_L.
    """
    if kernel.geometry != params.geometry:
        raise ConsistencyError("kernel table built for a different geometry")
    if kernel.m_max < 2 * params.M_modes:
        raise ConsistencyError(
            f"kernel table covers |m| <= {kernel.m_max}; need {2 * params.M_modes}"
        )
    if basis.M_modes != params.M_modes or basis.N != params.N:
        raise ConsistencyError("basis built for a different mode cutoff or particle number")
    if basis.sector is not None and basis.modulus != params.sector_modulus():
        raise ConsistencyError(
            "basis sector label is incompatible with the periodic potential harmonics"
        )
    L = params.geometry.L
    shifts, amps = [], []
    for j, c in params.v_per.fourier_coeffs.items():
        if j == 0:
            continue
        shifts += [j * L, -j * L]
        amps += [0.5 * c, 0.5 * c]
    diag_const = params.N * params.v_per.fourier_coeffs.get(0, 0.0)
    pair = np.ascontiguousarray(kernel.coeffs[kernel.m_max - 2 * params.M_modes:
                                              kernel.m_max + 2 * params.M_modes + 1])
    rows, cols, vals = _assemble(
        basis.masks, basis._sorted, basis._order, params.n_modes,
        kinetic_energies(params), float(diag_const),
        np.array(shifts, dtype=np.int64), np.array(amps, dtype=float),
        pair, params.lam,
    )
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return HamiltonianMatrix(basis.dim, mat, basis)


def momentum_operator(basis, geom):
    """Diagonal of the total momentum operator (returned as a 1D array)."""
    dk = 2.0 * math.pi / geom.length
    return basis.total_momentum_index().astype(float) * dk


def truncation_edge(params):
    """Lowest free energy of any configuration using a mode beyond the cutoff."""
    dk = params.dk
    outside = 0.5 * (dk * (params.M_modes + 1)) ** 2
    rest = sorted(0.5 * (dk * n) ** 2 for n in range(-params.M_modes, params.M_modes + 1))
    return outside + sum(rest[: params.N - 1])
