import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swnt_kubo import ConvergenceError, DomainError, QuadSpec, bessel_k0, elliptic_k
from swnt_kubo.special import EULER_GAMMA, _k0_numpy, quad_log_singular

# Reference values from the integral K0(x) = int_0^inf exp(-x cosh t) dt (adaptive quadrature)
K0_AT_1 = 0.42102443824070834
K0_AT_10 = 1.7780062316167652e-5
# pi / (2 AGM(1, sqrt(1/2)))
ELLIPTIC_K_HALF = 1.8540746773013719


def test_k0_reference_points():
    assert bessel_k0(1.0) == pytest.approx(K0_AT_1, rel=1e-13)
    assert bessel_k0(10.0) == pytest.approx(K0_AT_10, rel=1e-8)


def test_k0_small_argument_limit():
    for x in (1e-4, 1e-6, 1e-8):
        assert abs(bessel_k0(x) + math.log(x / 2) + EULER_GAMMA) < 2 * x


def test_k0_matches_scipy_over_range():
    from scipy.special import k0
    x = np.geomspace(1e-8, 700, 400)
    assert np.max(np.abs(bessel_k0(x) / k0(x) - 1)) < 1e-12


def test_k0_numpy_branch_matches():
    x = np.geomspace(1e-8, 700, 257)
    assert np.max(np.abs(_k0_numpy(x) / bessel_k0(x) - 1)) < 1e-13


def test_k0_underflow_and_shape():
    assert bessel_k0(800.0) == 0.0
    out = bessel_k0(np.array([[0.5, 1.0], [2.0, 3.0]]))
    assert out.shape == (2, 2)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_k0_domain(bad):
    with pytest.raises(DomainError):
        bessel_k0(bad)


@given(st.floats(1e-6, 600), st.floats(1e-6, 600))
@settings(max_examples=200, deadline=None)
def test_k0_decreasing_positive(x1, x2):
    lo, hi = sorted((x1, x2))
    if hi - lo < 1e-9 * hi:
        return
    assert bessel_k0(lo) > bessel_k0(hi) > 0


def test_elliptic_reference_points():
    assert elliptic_k(0.0) == pytest.approx(math.pi / 2, rel=1e-15)
    assert elliptic_k(0.5) == pytest.approx(ELLIPTIC_K_HALF, rel=1e-13)


def test_elliptic_log_divergence():
    m = 1 - 1e-8
    assert elliptic_k(m) == pytest.approx(0.5 * math.log(16 / (1 - m)), rel=1e-6)


def test_elliptic_matches_scipy():
    from scipy.special import ellipk
    m = np.linspace(0, 0.999, 200)
    assert np.max(np.abs(elliptic_k(m) / ellipk(m) - 1)) < 1e-13


@pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5, np.nan])
def test_elliptic_domain(bad):
    with pytest.raises(DomainError):
        elliptic_k(bad)


def test_elliptic_increasing():
    vals = elliptic_k(np.linspace(0, 0.9999, 1000))
    assert np.all(np.diff(vals) > 0)


def test_quad_log_examples():
    assert quad_log_singular(np.log, 0.0, 1.0, 0.0) == pytest.approx(-1.0, abs=1e-12)
    val = quad_log_singular(lambda y: np.log(np.abs(np.sin(y / 2))), 0.0, math.pi, 0.0)
    assert val == pytest.approx(-math.pi * math.log(2), rel=1e-12)
    assert quad_log_singular(lambda x: np.ones_like(x), 0.0, 1.0) == pytest.approx(1.0, abs=1e-15)


def test_quad_interior_singularity_and_reversal():
    f = lambda x: np.log(np.abs(x - 0.3))
    exact = (0.7 * math.log(0.7) - 0.7) + (0.3 * math.log(0.3) - 0.3)
    assert quad_log_singular(f, 0.0, 1.0, 0.3) == pytest.approx(exact, rel=1e-12)
    assert quad_log_singular(f, 1.0, 0.0, 0.3) == pytest.approx(-exact, rel=1e-12)


@given(st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_quad_additive(c):
    spec = QuadSpec()
    f = lambda x: np.log(x) * np.cos(x)
    whole = quad_log_singular(f, 0.0, 1.0, 0.0, spec)
    parts = quad_log_singular(f, 0.0, c, 0.0, spec) + quad_log_singular(f, c, 1.0, None, spec)
    assert abs(whole - parts) <= 2 * spec.abs_tol + 1e-12 * abs(whole)


def test_quad_nonconvergence_reports_partial():
    spec = QuadSpec(abs_tol=1e-15, rel_tol=1e-15, max_subdivisions=3)
    with pytest.raises(ConvergenceError) as info:
        quad_log_singular(lambda x: np.sin(1 / (x + 1e-3)), 0.0, 1.0, None, spec)
    assert info.value.partial is not None


def test_quadspec_validation():
    with pytest.raises(DomainError):
        QuadSpec(abs_tol=0.0)
    with pytest.raises(DomainError):
        QuadSpec(max_subdivisions=0)
    with pytest.raises(DomainError):
        quad_log_singular(np.log, 0.0, 1.0, 2.0)
