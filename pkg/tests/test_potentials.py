import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swnt_kubo import (CylinderGeometry, DomainError, PairKernelTable, PeriodicPotentialSpec,
                       ToleranceError, ValidationError, periodized_coulomb, v_L_eval, v_per_eval,
                       v_r, v_r_eval)
from swnt_kubo.potentials import (coulomb_ft, coulomb_on_cylinder, pair_fourier_coeff,
                                  project_periodized, v_L_norm, v_r_quadrature)

REF = CylinderGeometry(r=0.2, a=1.0, L=4)

# sqrt(2/pi) int_0^inf cos(p x) / sqrt(x^2 + s^2) dx, p=1, y=0.3, r=0.2 (QUADPACK QAWF)
FT_ORACLE = 1.165407980369447
# (2/La) I0(r p) K0(r p), p = 2 pi m / La, La = 4, r = 0.2 (mpmath, 30 digits)
COEFF_ORACLE = {1: 0.681670420193406718, 2: 0.408405321657887767,
                3: 0.282384914102059282, 10: 0.0808219971274652280}
# (1/La) int_{-La/2}^{La/2} v_r dx for r=0.2, La=4 (mpmath tanh-sinh, AGM form)
MEAN_ORACLE = 1.50033852094908037


def test_geometry_constraint():
    with pytest.raises(ValidationError, match="2\\*sqrt\\(2\\)\\*r < a"):
        CylinderGeometry(r=0.5, a=1.0)
    with pytest.raises(ValidationError):
        CylinderGeometry(r=0.1, L=0)
    g = CylinderGeometry(r=0.2, a=1.0, L=4, eps=2.0, charge=2.0)
    assert g.length == 4.0 and g.coupling == 2.0
    assert g.area == pytest.approx(2 * math.pi * 0.2 * 4)


def test_coulomb_examples():
    g = CylinderGeometry(r=0.25)
    assert coulomb_on_cylinder(0.0, math.pi * 0.25, g) == pytest.approx(2.0, rel=1e-15)
    assert coulomb_on_cylinder(5.0, 0.0, REF) == pytest.approx(0.2, rel=1e-15)
    with pytest.raises(DomainError):
        coulomb_on_cylinder(0.0, 0.0, REF)


def test_coulomb_symmetry(rng):
    x = rng.uniform(-3, 3, 50)
    y = rng.uniform(-math.pi * 0.2, math.pi * 0.2, 50)
    v = coulomb_on_cylinder(x, y, REF)
    assert np.all(v > 0)
    assert np.array_equal(v, coulomb_on_cylinder(x, -y, REF))
    assert np.array_equal(v, coulomb_on_cylinder(-x, y, REF))


def test_coulomb_ft_oracle():
    assert coulomb_ft(1.0, 0.3, REF) == pytest.approx(FT_ORACLE, abs=1e-6)
    assert coulomb_ft(-1.7, 0.3, REF) == coulomb_ft(1.7, 0.3, REF)
    vals = coulomb_ft(np.linspace(0.1, 20, 50), 0.3, REF)
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(DomainError):
        coulomb_ft(0.0, 0.3, REF)
    with pytest.raises(DomainError):
        coulomb_ft(1.0, 0.0, REF)


def test_periodized_periodic_and_positive():
    x = np.linspace(-2, 2, 41)
    for y in (0.3, 0.05, 1e-4):
        v = periodized_coulomb(x, y, REF)
        assert np.all(v > 0)
        assert np.max(np.abs(v - periodized_coulomb(x + REF.length, y, REF))) < 1e-12 * v.max()


def test_periodized_fourier_and_image_routes_agree():
    # y = 0.02 needs ~ 2000 Fourier terms; force both routes
    y = 0.02
    x = np.array([0.0, 0.3, 1.1, 2.0])
    fourier = periodized_coulomb(x, y, REF, M_fourier=4000, tol=1e-6)
    images = periodized_coulomb(x, 1e-4, REF)
    assert np.all(images > 0)
    from swnt_kubo.potentials import _chord, _periodized_images
    img = _periodized_images(x, float(_chord(y, REF.r)), REF)
    assert np.max(np.abs(fourier / img - 1)) < 1e-9


def test_periodized_tolerance_error():
    with pytest.raises(ToleranceError):
        periodized_coulomb(0.3, 0.3, REF, M_fourier=2, tol=1e-10)


def test_periodized_converges_like_inverse_L():
    x, y = 0.7, 0.3
    diffs = []
    for L in (8, 16, 32, 64):
        g = CylinderGeometry(r=0.2, a=1.0, L=L)
        d = abs(periodized_coulomb(x, y, g) - coulomb_on_cylinder(x, y, g))
        # bound from the proof: (La/3) |d/dx V_r(La/2, y)|
        half = g.length / 2
        s = 2 * g.r * math.sin(y / (2 * g.r))
        bound = g.length / 3 * half / (half**2 + s**2) ** 1.5
        assert d <= bound
        diffs.append(d)
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_v_per_examples():
    spec = PeriodicPotentialSpec({1: 1.0})
    assert v_per_eval(0.0, spec) == 1.0
    assert v_per_eval(0.5, spec) == pytest.approx(-1.0)
    assert np.all(v_per_eval(np.linspace(0, 3, 7), PeriodicPotentialSpec()) == 0)
    merged = PeriodicPotentialSpec({1: 0.5, -1: 0.25, 2: 0.0})
    assert dict(merged.fourier_coeffs) == {1: 0.75}
    assert merged.harmonics == [1] and not merged.is_free
    x = np.linspace(0, 1, 9)
    assert np.allclose(v_per_eval(x, spec, a=1.0), v_per_eval(x + 1.0, spec, a=1.0))


@given(st.floats(0.01, 0.3), st.floats(1e-3, 50))
@settings(max_examples=60, deadline=None)
def test_v_r_scaling_identity(r, x):
    assert v_r(x, r) == pytest.approx(v_r(x / r, 1.0) / r, rel=1e-12)


def test_v_r_even_positive_decreasing():
    x = np.geomspace(1e-6, 100, 200)
    v = v_r_eval(x, REF)
    assert np.all(v > 0) and np.all(np.diff(v) < 0)
    assert np.array_equal(v, v_r_eval(-x, REF))
    with pytest.raises(DomainError):
        v_r_eval(0.0, REF)


def test_v_r_small_and_large_asymptotics():
    r = 0.05
    for x in (1e-6, 1e-5, 1e-4):
        lead = (3 * math.log(2) + math.log(r) - math.log(x)) / (math.pi * r)
        assert abs(v_r(x, r) - lead) / v_r(x, r) < 1e-3
    for fac in (100, 1000):
        x = fac * r
        approx = 1 / x - r**2 / x**3
        assert abs(v_r(x, r) / approx - 1) <= 10 * (r / x) ** 4


def test_v_r_matches_direct_projection():
    for x in (0.003, 0.2, 5.0):
        assert v_r_quadrature(x, REF) == pytest.approx(v_r_eval(x, REF), rel=1e-10)


def test_pair_coefficients_oracle():
    for m, val in COEFF_ORACLE.items():
        assert pair_fourier_coeff(m, REF) == pytest.approx(val, rel=1e-12)
        assert pair_fourier_coeff(-m, REF) == pair_fourier_coeff(m, REF)
    assert pair_fourier_coeff(0, REF) == pytest.approx(MEAN_ORACLE, rel=1e-12)


def test_pair_table_decay_and_symmetry():
    t = PairKernelTable.build(REF, 40)
    assert np.array_equal(t.coeffs, t.coeffs[::-1])
    pos = t.coeff(np.arange(1, 41))
    assert np.all(pos > 0) and np.all(np.diff(pos) < 0)
    with pytest.raises(DomainError):
        t.coeff(41)
    shifted = t.shifted(0.5)
    assert shifted.coeff(0) == pytest.approx(t.coeff(0) + 0.5)
    assert np.array_equal(shifted.coeff(np.arange(1, 41)), pos)


def test_pair_table_csv(tmp_path):
    t = PairKernelTable.build(REF, 3)
    path = tmp_path / "kernel.csv"
    t.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["m", "coeff"]
    assert [int(r[0]) for r in rows[1:]] == [-3, -2, -1, 0, 1, 2, 3]
    assert float(rows[4][1]) == t.coeff(0)


def test_synthesis_reproduces_projected_periodization():
    x = REF.length / 4
    direct = project_periodized(x, REF)
    assert v_L_eval(x, REF) == pytest.approx(direct, abs=1e-6)
    # plain truncation at x = La/4: partial sums of cos(m pi/2) are bounded by 1,
    # so Abel summation bounds the tail by 2 c_{M+1}
    t = PairKernelTable.build(REF, 401)
    for M in (50, 400):
        err = abs(v_L_eval(x, REF, M_fourier=M, table=t) - direct)
        assert err <= 2 * t.coeff(M + 1)


def test_v_L_positive_even_periodic():
    x = np.linspace(-REF.length / 2, REF.length / 2, 10001)
    x = x[x != 0.0]
    v = v_L_eval(x, REF)
    assert v.min() >= v_r_eval(REF.length / 2, REF) / 3
    assert np.max(np.abs(v - v_L_eval(-x, REF))) < 1e-12 * v.max()
    y = np.array([0.3, 1.7])
    assert np.allclose(v_L_eval(y, REF), v_L_eval(y + REF.length, REF), rtol=1e-12)
    with pytest.raises(DomainError):
        v_L_eval(REF.length, REF)


def test_v_L_norm_matches_real_space_quadrature():
    from scipy.integrate import quad
    g = CylinderGeometry(r=0.1, a=1.0, L=2)
    from swnt_kubo.potentials import synthesis_cutoff
    t = PairKernelTable.build(g, synthesis_cutoff(g, 1e-8))
    # QUADPACK handles the integrable log^2 endpoint singularity
    half, _ = quad(lambda x: v_L_eval(x, g, table=t) ** 2, 0.0, g.length / 2, limit=400,
                   epsabs=1e-11, epsrel=1e-11)
    assert v_L_norm(g) == pytest.approx(math.sqrt(2 * half), rel=1e-8)
