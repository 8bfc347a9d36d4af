"""Scalar special functions and log-singularity aware quadrature.

``bessel_k0`` uses the ascending series for ``x <= 2`` and Steed's continued
fraction (Temme's CF2) above it; both branches reach double precision.  The
numba loop and the vectorized numpy branch implement the same recurrences.
"""
import heapq
import math
from dataclasses import dataclass

import numpy as np

from ._accel import USE_NUMBA, njit
from .errors import ConvergenceError, DomainError

EULER_GAMMA = 0.57721566490153286061
_K0_SWITCH = 2.0
_K0_UNDERFLOW = 745.0
_EPS = 1e-17


@njit
def _k0_scalar(x):
    if x > _K0_UNDERFLOW:
        return 0.0
    if x <= _K0_SWITCH:
        q = 0.25 * x * x
        term = 1.0
        i0 = 1.0
        harmonic = 0.0
        tail = 0.0
        for k in range(1, 40):
            term *= q / (k * k)
            harmonic += 1.0 / k
            i0 += term
            tail += term * harmonic
            if term < _EPS * i0:
                break
        return -(math.log(0.5 * x) + EULER_GAMMA) * i0 + tail
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, 500):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    return math.exp(-x + 0.5 * math.log(math.pi / (2.0 * x))) / s


@njit
def _k0_loop(x):
    out = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        out[i] = _k0_scalar(flat[i])
    return out.reshape(x.shape)


def _k0_numpy(x):
    out = np.zeros_like(x)
    small = x <= _K0_SWITCH
    xs = x[small]
    if xs.size:
        q = 0.25 * xs * xs
        term = np.ones_like(xs)
        i0 = np.ones_like(xs)
        tail = np.zeros_like(xs)
        harmonic = 0.0
        for k in range(1, 30):
            term = term * q / (k * k)
            harmonic += 1.0 / k
            i0 += term
            tail += term * harmonic
        out[small] = -(np.log(0.5 * xs) + EULER_GAMMA) * i0 + tail
    mid = (~small) & (x <= _K0_UNDERFLOW)
    xm = x[mid]
    if xm.size:
        b = 2.0 * (1.0 + xm)
        d = 1.0 / b
        delh = d.copy()
        q1 = np.zeros_like(xm)
        q2 = np.ones_like(xm)
        q = np.full_like(xm, 0.25)
        c = 0.25
        a = -0.25
        s = 1.0 + q * delh
        active = np.ones(xm.shape, dtype=bool)
        for i in range(1, 500):
            a -= 2 * i
            c = -a * c / (i + 1.0)
            qnew = (q1 - b * q2) / a
            q1, q2 = q2, qnew
            q = q + c * qnew
            b = b + 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            dels = np.where(active, q * delh, 0.0)
            s = s + dels
            active &= np.abs(dels / s) >= _EPS
            if not active.any():
                break
        out[mid] = np.exp(-xm + 0.5 * np.log(np.pi / (2.0 * xm))) / s
    return out


def bessel_k0(x):
    """Modified Bessel function of the second kind, order zero.

    Accepts a scalar or an array of strictly positive finite arguments and
    returns the same shape.  Values past the double-precision underflow point
    are returned as 0.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("bessel_k0 requires finite x > 0")
    if USE_NUMBA:
        res = _k0_loop(np.ascontiguousarray(arr))
    else:
        res = _k0_numpy(arr)
    if arr.ndim == 0:
        return float(res.reshape(()))
    return res


def elliptic_k(m):
    """Complete elliptic integral of the first kind in the parameter convention.

    K(m) = int_0^{pi/2} dtheta / sqrt(1 - m sin^2 theta), evaluated through the
    arithmetic-geometric mean.  Vectorized over ``m``.
    """
    arr = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise DomainError("elliptic_k requires 0 <= m < 1")
    a = np.ones_like(arr)
    b = np.sqrt(1.0 - arr)
    for _ in range(60):
        a, b = 0.5 * (a + b), np.sqrt(a * b)
        if np.all(np.abs(a - b) <= 1e-16 * a):
            break
    res = np.pi / (2.0 * a)
    if arr.ndim == 0:
        return float(res.reshape(()))
    return res


@dataclass(frozen=True)
class QuadSpec:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not self.abs_tol > 0 or not self.rel_tol > 0:
            raise DomainError("quadrature tolerances must be positive")
        if int(self.max_subdivisions) < 1:
            raise DomainError("max_subdivisions must be >= 1")


# 7-point Gauss / 15-point Kronrod pair on [-1, 1].
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_WEIGHTS_K = np.concatenate([_WK[:-1], _WK[::-1]])
_WEIGHTS_G = np.zeros(15)
_WEIGHTS_G[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f, lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    vals = np.asarray(f(mid + half * _NODES), dtype=float)
    if vals.shape != _NODES.shape:
        vals = np.broadcast_to(vals, _NODES.shape)
    k = half * np.dot(_WEIGHTS_K, vals)
    g = half * np.dot(_WEIGHTS_G, vals)
    return k, abs(k - g)


def _adaptive(f, lo, hi, spec):
    total, err = _gk15(f, lo, hi)
    heap = [(-err, lo, hi, total)]
    n_intervals = 1
    while True:
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if err <= tol:
            return total, err
        if n_intervals >= spec.max_subdivisions:
            raise ConvergenceError(
                f"quadrature on [{lo}, {hi}] not converged after {n_intervals} subintervals "
                f"(error estimate {err:.3e} > {tol:.3e})",
                partial=total,
            )
        neg_e, a, b, val = heapq.heappop(heap)
        c = 0.5 * (a + b)
        v1, e1 = _gk15(f, a, c)
        v2, e2 = _gk15(f, c, b)
        total += v1 + v2 - val
        err += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, a, c, v1))
        heapq.heappush(heap, (-e2, c, b, v2))
        n_intervals += 1
        if n_intervals % 64 == 0:
            # re-sum to shed accumulated rounding in the running totals
            total = sum(item[3] for item in heap)
            err = sum(-item[0] for item in heap)


def quad_log_singular(f, a, b, singular_at=None, spec=None):
    """Integrate ``f`` over ``[a, b]`` allowing a logarithmic singularity.

    The interval is split at ``singular_at`` so the singular point is always an
    endpoint; each piece is then refined by global adaptive Gauss-Kronrod
    bisection, which grades the mesh geometrically toward the singularity.
    ``f`` must accept a numpy array of abscissae.
    """
    spec = spec or QuadSpec()
    if a == b:
        return 0.0
    if a > b:
        return -quad_log_singular(f, b, a, singular_at, spec)
    pieces = [a, b]
    if singular_at is not None:
        if not a <= singular_at <= b:
            raise DomainError("singular point must lie inside the integration interval")
        if a < singular_at < b:
            pieces = [a, singular_at, b]
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        val, _ = _adaptive(f, lo, hi, spec)
        total += val
    return total
