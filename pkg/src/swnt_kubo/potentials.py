"""Cylinder Coulomb kernels, their periodization and circle projections.

Conventions: hbar = m_e = 1; ``geometry.coupling`` carries e^2/eps.  The
torus has length ``La = L * a`` and mode ``m`` has wavenumber ``2 pi m / La``.
The projected periodic pair kernel is synthesised as

    v_L(x) = sum_m coeff_m exp(2 pi i m x / La),

so ``coeff_m`` are plain Fourier-series coefficients and enter the momentum
space two-body matrix elements without further normalization.
"""
import csv
import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from scipy.special import polygamma

from .errors import DomainError, ToleranceError, ValidationError
from .special import QuadSpec, bessel_k0, quad_log_singular

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
# above this many Fourier terms periodized_coulomb switches to the image sum
_MAX_FOURIER_TERMS = 4096
_IMAGE_CELLS = 2000
_COEFF_QUAD = QuadSpec(abs_tol=1e-14, rel_tol=1e-12, max_subdivisions=4000)


@dataclass(frozen=True)
class CylinderGeometry:
    r: float
    a: float = 1.0
    L: int = 1
    eps: float = 1.0
    charge: float = 1.0

    def __post_init__(self):
        if not (0.0 < 2.0 * math.sqrt(2.0) * self.r < self.a):
            raise ValidationError(
                f"geometry requires 0 < 2*sqrt(2)*r < a (got r={self.r}, a={self.a})"
            )
        if int(self.L) != self.L or self.L < 1:
            raise ValidationError(f"L must be a positive integer (got {self.L})")
        if not self.eps > 0:
            raise ValidationError("eps must be positive")
        object.__setattr__(self, "L", int(self.L))

    @property
    def length(self):
        return self.L * self.a

    @property
    def coupling(self):
        return self.charge**2 / self.eps

    @property
    def area(self):
        """Tube surface area S_L = 2 pi r L a."""
        return 2.0 * math.pi * self.r * self.length


@dataclass(frozen=True)
class PeriodicPotentialSpec:
    """Circumference-averaged ion potential ``sum_j c_j cos(2 pi j x / a)``."""

    fourier_coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {}
        for j, c in dict(self.fourier_coeffs).items():
            j = abs(int(j))
            c = float(c)
            if not math.isfinite(c):
                raise ValidationError(f"non-finite harmonic coefficient for j={j}")
            merged[j] = merged.get(j, 0.0) + c
        merged = {j: c for j, c in sorted(merged.items()) if c != 0.0}
        object.__setattr__(self, "fourier_coeffs", MappingProxyType(merged))

    @property
    def is_free(self):
        return not any(j > 0 for j in self.fourier_coeffs)

    @property
    def harmonics(self):
        return [j for j in self.fourier_coeffs if j > 0]

    def as_dict(self):
        return {str(j): c for j, c in self.fourier_coeffs.items()}


def v_per_eval(x, spec, a=1.0):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j, c in spec.fourier_coeffs.items():
        out = out + c * np.cos(2.0 * np.pi * j * x / a)
    return float(out) if out.ndim == 0 else out


def _chord(y, r):
    return 2.0 * r * np.abs(np.sin(np.asarray(y, dtype=float) / (2.0 * r)))


def coulomb_on_cylinder(x, y, geom):
    x = np.asarray(x, dtype=float)
    s = _chord(y, geom.r)
    rho2 = x * x + s * s
    if np.any(rho2 == 0.0):
        raise DomainError("Coulomb potential is singular at (x, y) = (0, 0)")
    out = geom.coupling / np.sqrt(rho2)
    return float(out) if out.ndim == 0 else out


def coulomb_ft(p, y, geom):
    """Fourier transform in x of the cylinder potential (unitary 1/sqrt(2 pi) convention)."""
    p = np.asarray(p, dtype=float)
    s = _chord(y, geom.r)
    z = np.abs(p) * s
    if np.any(z == 0.0):
        raise DomainError("coulomb_ft requires p != 0 and y != 0 mod 2 pi r")
    out = _SQRT_2_OVER_PI * geom.coupling * bessel_k0(z)
    return float(out) if np.ndim(out) == 0 else out


def _fourier_tail_bound(eps, M, La, coupling):
    # K0(z) <= sqrt(pi / 2z) exp(-z); geometric sum of the remaining terms
    z = eps * (M + 1)
    return 4.0 / La * coupling * math.sqrt(math.pi / (2.0 * z)) * math.exp(-z) / (-math.expm1(-eps))


def fourier_cutoff(y, geom, tol=1e-10, limit=None):
    """Smallest M whose K0 tail bound for the periodized sum at ``y`` is below ``tol``."""
    s = float(_chord(y, geom.r))
    if s == 0.0:
        raise DomainError("fourier_cutoff requires y != 0 mod 2 pi r")
    La = geom.length
    eps = 2.0 * math.pi * s / La
    hi = max(1, int(math.log(1.0 / tol) / eps))
    while _fourier_tail_bound(eps, hi, La, geom.coupling) > tol:
        hi *= 2
        if limit is not None and hi > 2 * limit:
            return hi
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _fourier_tail_bound(eps, mid, La, geom.coupling) > tol:
            lo = mid
        else:
            hi = mid
    return hi


def _periodized_fourier(x, s, geom, M):
    La = geom.length
    m = np.arange(1, M + 1, dtype=float)
    weights = bessel_k0(m * (2.0 * np.pi * s / La))
    phase = np.cos(np.multiply.outer(2.0 * np.pi * x / La, m))
    osc = 4.0 / La * (phase @ weights)
    mean = 2.0 / La * math.asinh(La / (2.0 * s))
    return geom.coupling * (osc + mean)


def _periodized_images(x, s, geom, cells=_IMAGE_CELLS):
    # Poisson-dual form: lattice sum of 1/rho minus the cell integrals of the
    # discarded zero mode, plus an Euler-Maclaurin estimate of the remainder.
    La = geom.length
    X = np.mod(x + 0.5 * La, La) - 0.5 * La
    n = np.arange(-cells, cells + 1, dtype=float)
    u = np.add.outer(X, n * La)
    lattice = np.sum(1.0 / np.sqrt(u * u + s * s), axis=-1)
    outer = 2.0 / La * (math.asinh((cells + 0.5) * La / s) - math.asinh(0.5 * La / s))
    remainder = (X * X - La * La / 12.0) / La**3 * (-polygamma(2, cells + 1))
    return geom.coupling * (lattice - outer + remainder)


def periodized_coulomb(x, y, geom, M_fourier=None, tol=1e-10):
    """La-periodic pair potential on the cylinder for ``y != 0``.

    Sums the nonzero Fourier modes with K0 weights and adds the mean over one
    period of the bare potential (closed form ``(2/La) asinh(La / 2s)``).
    With ``M_fourier=None`` the cutoff is the smallest one whose K0 tail bound
    is below ``tol``; when that exceeds a few thousand terms (small chord
    ``s``), the Poisson-dual image sum is evaluated instead.
    """
    x = np.asarray(x, dtype=float)
    s = float(_chord(y, geom.r))
    if s == 0.0:
        raise DomainError("periodized_coulomb requires y != 0 mod 2 pi r")
    La = geom.length
    if M_fourier is not None:
        M = int(M_fourier)
        bound = _fourier_tail_bound(2.0 * math.pi * s / La, M, La, geom.coupling)
        if bound > tol:
            raise ToleranceError(
                f"Fourier tail bound {bound:.3e} exceeds tolerance {tol:.1e} at M_fourier={M}"
            )
        out = _periodized_fourier(x, s, geom, M)
    else:
        M = fourier_cutoff(y, geom, tol, limit=_MAX_FOURIER_TERMS)
        if M <= _MAX_FOURIER_TERMS:
            out = _periodized_fourier(x, s, geom, M)
        else:
            out = _periodized_images(x, s, geom)
    return float(out) if np.ndim(out) == 0 else out


def _elliptic_k_complement(m1):
    # K(1 - m1) from the complementary parameter, avoiding cancellation near m -> 1
    a = np.ones_like(m1)
    b = np.sqrt(m1)
    for _ in range(60):
        a, b = 0.5 * (a + b), np.sqrt(a * b)
        if np.all(np.abs(a - b) <= 1e-16 * a):
            break
    return np.pi / (2.0 * a)


def v_r(x, r, coupling=1.0):
    """Circle projection of the cylinder Coulomb potential (closed form)."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0.0) or not np.all(np.isfinite(x)):
        raise DomainError("v_r diverges at x = 0")
    rho2 = x * x + 4.0 * r * r
    out = coupling * (2.0 / np.pi) / np.sqrt(rho2) * _elliptic_k_complement(x * x / rho2)
    return float(out) if out.ndim == 0 else out


def v_r_eval(x, geom):
    return v_r(x, geom.r, geom.coupling)


def project_on_circle(func, x, r, spec=None):
    """(1 / 2 pi r) * int_{-pi r}^{pi r} func(x, y) dy for an even-in-y kernel."""
    spec = spec or QuadSpec(abs_tol=1e-12, rel_tol=1e-11, max_subdivisions=4000)
    return quad_log_singular(lambda u: func(x, r * u), 0.0, math.pi, 0.0, spec) / math.pi


def v_r_quadrature(x, geom, spec=None):
    """Direct circle projection of the bare potential; independent of the elliptic form."""
    return project_on_circle(lambda xx, y: coulomb_on_cylinder(xx, y, geom), float(x), geom.r, spec)


def project_periodized(x, geom, tol=1e-11, spec=None):
    """Circle projection of :func:`periodized_coulomb` by quadrature over y."""

    def integrand(xx, y):
        return np.array([periodized_coulomb(xx, yi, geom, tol=tol) for yi in np.atleast_1d(y)])

    return project_on_circle(integrand, float(x), geom.r, spec)


def v_r_fourier(p, geom, spec=None):
    """Unitary Fourier transform of v_r at wavenumber ``p != 0``."""
    p = abs(float(p))
    if p == 0.0:
        raise DomainError("v_r has no Fourier transform at p = 0")
    spec = spec or _COEFF_QUAD
    scale = 2.0 * geom.r * p

    def integrand(u):
        return bessel_k0(scale * np.sin(0.5 * u))

    avg = quad_log_singular(integrand, 0.0, math.pi, 0.0, spec) / math.pi
    return _SQRT_2_OVER_PI * geom.coupling * avg


def mean_pair_coeff(geom, spec=None):
    """Zero mode: (1 / La) * int_{-La/2}^{La/2} v_r(x) dx."""
    spec = spec or _COEFF_QUAD
    La = geom.length
    half = quad_log_singular(lambda x: v_r_eval(x, geom), 0.0, 0.5 * La, 0.0, spec)
    return 2.0 * half / La


def pair_fourier_coeff(m, geom, spec=None):
    m = int(m)
    La = geom.length
    if m == 0:
        return mean_pair_coeff(geom, spec)
    p = 2.0 * math.pi * abs(m) / La
    return math.sqrt(2.0 * math.pi) / La * v_r_fourier(p, geom, spec)


@dataclass(frozen=True)
class PairKernelTable:
    geometry: CylinderGeometry
    coeffs: np.ndarray
    mean_term: float

    @property
    def m_max(self):
        return (len(self.coeffs) - 1) // 2

    @classmethod
    def build(cls, geometry, m_max, spec=None):
        m_max = int(m_max)
        positive = [pair_fourier_coeff(m, geometry, spec) for m in range(1, m_max + 1)]
        mean = pair_fourier_coeff(0, geometry, spec)
        coeffs = np.concatenate([positive[::-1], [mean], positive])
        coeffs.setflags(write=False)
        return cls(geometry, coeffs, mean)

    def coeff(self, m):
        m = np.asarray(m)
        if np.any(np.abs(m) > self.m_max):
            raise DomainError(f"mode outside table range |m| <= {self.m_max}")
        out = self.coeffs[m + self.m_max]
        return float(out) if out.ndim == 0 else out

    def shifted(self, constant):
        """Copy with ``constant`` added to the zero mode (v_L -> v_L + constant)."""
        coeffs = self.coeffs.copy()
        coeffs[self.m_max] += constant
        coeffs.setflags(write=False)
        return PairKernelTable(self.geometry, coeffs, self.mean_term + constant)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "coeff"])
            for m, c in zip(range(-self.m_max, self.m_max + 1), self.coeffs):
                writer.writerow([m, format(float(c), ".17g")])


def _asymptotic_constants(geom):
    # coeff_m ~ A/m + B/m^3 + C/m^5 from I0(z)K0(z) ~ (1/2z)(1 + 1/(8z^2) + 27/(128z^4))
    La, r = geom.length, geom.r
    A = geom.coupling / (2.0 * math.pi * r)
    ratio = La / (2.0 * math.pi * r)
    B = A * ratio**2 / 8.0
    C = A * 27.0 * ratio**4 / 128.0
    return A, B, C


def synthesis_cutoff(geom, tol=1e-8, limit=20000):
    """Number of explicit modes for :func:`v_L_eval` after tail subtraction."""
    A, B, C = _asymptotic_constants(geom)
    asym = math.ceil(3.0 * geom.length / (2.0 * math.pi * geom.r))
    need = math.ceil(((C + 0.25 * B) / (4.0 * tol)) ** 0.25)
    M = max(asym, need, 8)
    if M > limit:
        raise ToleranceError(f"v_L synthesis needs {M} modes for tol={tol:.1e} (limit {limit})")
    return M


def _log_series(theta):
    # sum_{m>=1} cos(m theta)/m = -ln|2 sin(theta/2)|
    return -np.log(np.abs(2.0 * np.sin(0.5 * theta)))


def _cubic_series(theta):
    # sum_{m>=1} cos(m theta) / (m (m^2 - 1/4)) in closed form, 0 < theta < 2 pi
    theta = np.mod(theta, 2.0 * np.pi)
    z = np.exp(0.5j * theta)
    at = np.arctanh(z)
    val = 4.0 * np.log(1.0 - z * z) + 4.0 * z * at + 4.0 * np.conj(z) * (at - z)
    return np.real(val)


def v_L_eval(x, geom, M_fourier=None, table=None, tol=1e-8):
    """Projected periodic pair kernel by Fourier synthesis.

    With an explicit ``M_fourier`` the plain truncated series over
    ``|m| <= M_fourier`` is returned (a trigonometric polynomial, finite even at
    x = 0).  Otherwise the leading 1/m and 1/m^3 asymptotics of the
    coefficients are summed in closed form and only the fast-decaying
    remainder is synthesised, reproducing the logarithmic singularity at the
    lattice points; such evaluation at ``x = 0 mod La`` raises.
    """
    x = np.asarray(x, dtype=float)
    La = geom.length
    theta = 2.0 * np.pi * x / La
    if M_fourier is not None:
        M = int(M_fourier)
        if table is None or table.m_max < M:
            table = PairKernelTable.build(geom, M)
        m = np.arange(1, M + 1)
        out = table.coeff(0) + 2.0 * np.cos(np.multiply.outer(theta, m)) @ table.coeff(m)
        return float(out) if np.ndim(out) == 0 else out
    if np.any(np.mod(x, La) == 0.0):
        raise DomainError("v_L diverges logarithmically at x = 0 mod La")
    M = synthesis_cutoff(geom, tol)
    if table is None or table.m_max < M:
        table = PairKernelTable.build(geom, M)
    A, B, _ = _asymptotic_constants(geom)
    m = np.arange(1, M + 1, dtype=float)
    resid = table.coeff(np.arange(1, M + 1)) - A / m - B / (m * (m * m - 0.25))
    out = (
        table.coeff(0)
        + 2.0 * np.cos(np.multiply.outer(theta, m)) @ resid
        + 2.0 * A * _log_series(theta)
        + 2.0 * B * _cubic_series(theta)
    )
    return float(out) if np.ndim(out) == 0 else out


def v_L_norm(geom, table=None, tol=1e-10):
    """L^2(T_La) norm of v_L via Parseval with an asymptotic tail."""
    M = synthesis_cutoff(geom, tol=tol, limit=200000)
    if table is None or table.m_max < M:
        table = PairKernelTable.build(geom, M)
    A, B, _ = _asymptotic_constants(geom)
    c = table.coeff(np.arange(1, M + 1))
    head = table.coeff(0) ** 2 + 2.0 * np.sum(c * c)
    tail = 2.0 * (A * A * polygamma(1, M + 1) + 2.0 * A * B * polygamma(3, M + 1) / 6.0)
    return math.sqrt(geom.length * (head + tail))
