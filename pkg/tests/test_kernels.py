import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from negcount import kernels as K
from negcount.core import DivergenceError, ModelSpec, ValidationError


def fourier_z1(lam, d):
    val = integrate.quad(lambda p: math.cos(d * p) / (2 - 2 * math.cos(p) + lam), 0, math.pi, limit=400)[0]
    return -val / math.pi


def fourier_z2(lam, x):
    f = lambda a, b: math.cos(x[0] * a) * math.cos(x[1] * b) / (4 - 2 * math.cos(a) - 2 * math.cos(b) + lam)
    return -integrate.dblquad(f, 0, math.pi, 0, math.pi, epsabs=1e-12)[0] / math.pi**2


# Z1 closed form at lambda = 1/2: -1/sqrt(lam^2 + 4 lam) = -2/3
def test_z1_diagonal_resolvent_at_half(z1):
    assert K.resolvent_value(z1, 0.5, 0, 0) == pytest.approx(-2 / 3, rel=1e-14)


@pytest.mark.parametrize("lam, d", [(0.5, 0), (0.5, 3), (0.01, 7), (2.0, 1)])
def test_z1_resolvent_matches_fourier_integral(z1, lam, d):
    assert K.resolvent_value(z1, lam, 0, d) == pytest.approx(fourier_z1(lam, d), rel=1e-10)


@pytest.mark.parametrize("lam, x", [(0.5, (0, 0)), (0.5, (2, 1)), (0.1, (3, 0)), (1.0, (1, 1))])
def test_z2_resolvent_matches_double_integral(z2, lam, x):
    assert K.resolvent_value(z2, lam, (0, 0), x) == pytest.approx(fourier_z2(lam, x), rel=1e-9)


def test_z2_resolvent_diagonal_matches_elliptic_integral(z2):
    # R_lam(0,0) = -(2/(pi s)) K(m) with s = 4 + lam, m = (4/s)^2
    from scipy.special import ellipk

    for lam in (0.05, 0.5, 3.0):
        s = 4 + lam
        expected = -2.0 / (math.pi * s) * ellipk((4.0 / s) ** 2)
        assert K.resolvent_value(z2, lam, (0, 0), (0, 0)) == pytest.approx(expected, rel=1e-11)


def test_resolvent_reports_negative_value(z1):
    r = K.resolvent(z1, 0.3, 0, 2)
    assert r.value < 0 and r.method == "closed_form"
    with pytest.raises(ValidationError):
        K.resolvent(z1, 0.0, 0, 0)


@pytest.mark.parametrize("x", [1, -3, 10])
def test_z1_rtilde_is_distance(z1, x):
    assert K.regularized_resolvent(z1, x, 0) == abs(x)


def test_z1_rtilde_by_extrapolation(z1):
    assert K.regularized_resolvent(z1, 4, 0, method="extrapolate") == pytest.approx(4.0, abs=1e-6)


def test_z2_rtilde_nearest_and_diagonal_neighbours(z2):
    # 2 lim [R(x,0) - R(0,0)]: 1/2 at (1,0) and 2/pi at (1,1)
    assert K.regularized_resolvent(z2, (1, 0), (0, 0)) == pytest.approx(0.5, abs=1e-12)
    assert K.regularized_resolvent(z2, (1, 1), (0, 0)) == pytest.approx(2 / math.pi, abs=1e-12)


def test_fractional_rtilde(z1):
    assert K.regularized_resolvent(ModelSpec.fractional(0.5), 1, 0) == pytest.approx(4 / math.pi, rel=1e-12)
    # alpha = 1 is the nearest-neighbour Laplacian
    frac1 = ModelSpec.fractional(1.0)
    for d in (1, 2, 5):
        assert K.regularized_resolvent(frac1, d, 0) == pytest.approx(d, rel=1e-12)


def test_rtilde_rejects_transient_family():
    with pytest.raises(ValidationError):
        K.regularized_resolvent(ModelSpec.fractional(0.3), 1, 0)


def reflecting_truncation_rtilde(nu, p, levels, xs):
    """Killed Green function on the top cube with jumps of rank <= levels only,
    built directly from the jump rates (1-p) p^{r-1} onto the rank-r cube."""
    n = nu**levels
    idx = np.arange(n)
    h = np.zeros((n, n))
    for r in range(1, levels + 1):
        blk = idx // nu**r
        same = (blk[:, None] == blk[None, :]) / nu**r
        h += (1 - p) * p ** (r - 1) * (np.eye(n) - same)
    g = np.linalg.inv(h[1:, 1:])
    return np.array([g[x - 1, x - 1] for x in xs])


# reflecting truncations decrease to 2, 3, 4, 5 for x = 1, 2, 4, 8 at nu p = 1
def test_hierarchical_rtilde_against_truncation_oracle():
    xs = [1, 2, 4, 8]
    model = ModelSpec.hierarchical(2, 0.5, 6)
    exact = np.array([K.regularized_resolvent(model, x, 0) for x in xs])
    np.testing.assert_allclose(exact, [2.0, 3.0, 4.0, 5.0], rtol=1e-14)
    prev = None
    for levels in (6, 8, 10):
        approx = reflecting_truncation_rtilde(2, 0.5, levels, xs)
        assert np.all(approx > exact)
        if prev is not None:
            assert np.all(approx < prev)
        prev = approx
    np.testing.assert_allclose(prev, exact, atol=0.03)


@pytest.mark.parametrize("sigma", [0.1, 0.3, 1.0, 2.5])
def test_c_sigma_quadrature_matches_closed_form(sigma):
    assert K.c_sigma(sigma) == pytest.approx(K.c_sigma_closed(sigma), rel=1e-11)


def test_c_sigma_values():
    assert K.c_sigma(0.0) == 1.0
    assert K.c_sigma(1.0) == pytest.approx(0.1485, abs=5e-5)
    with pytest.raises(ValidationError):
        K.c_sigma(-1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_c_sigma_decreasing(a, b):
    lo, hi = sorted((a, b))
    assert K.c_sigma_closed(hi) <= K.c_sigma_closed(lo) + 1e-15


def test_z1_killed_time_integral_is_distance(z1):
    for x in (1, 5):
        assert K.tail_time_integral(z1, K.Killing.point(0), x, 0.0) == pytest.approx(x, rel=1e-10)


def test_tail_integral_of_recurrent_p0_diverges(z1):
    with pytest.raises(DivergenceError):
        K.tail_time_integral(z1, "p0", 0, 1.0)


def test_z2_green_constant():
    assert K.z2_alpha_closed() == pytest.approx(-5 * math.log(2) / (4 * math.pi), rel=1e-15)
    g = K.green2d_expansion([(0, 0), (1, 0)])
    assert g.alpha_const == pytest.approx(K.z2_alpha_closed(), abs=1e-8)
    assert g.v[(0, 0)] == 0.0


def test_z1_heat_kernel_conserves_mass(z1):
    total = sum(K.heat_kernel(z1, 2.0, 0, y) for y in range(-60, 61))
    assert total == pytest.approx(1.0, abs=1e-13)


def test_z1_heat_kernel_matches_fourier(z1):
    for t, d in [(0.5, 0), (3.0, 2)]:
        f = integrate.quad(lambda p: math.exp(-2 * t * (1 - math.cos(p))) * math.cos(d * p), 0, math.pi)[0] / math.pi
        assert K.heat_kernel(z1, t, 0, d) == pytest.approx(f, rel=1e-12)


def test_fractional_alpha_one_heat_kernel_equals_z1(z1):
    frac1 = ModelSpec.fractional(1.0)
    for t in (0.3, 4.0):
        assert K.heat_diagonal(frac1, t, 0) == pytest.approx(K.heat_diagonal(z1, t, 0), rel=1e-10)


def test_killed_heat_diagonal_reflection(z1):
    # reflection principle on Z1: p1(t, x, x) = p0(t, 0) - p0(t, 2x)
    val = K.killed_heat_diagonal(z1, K.Killing.point(0), 1.5, 2, method="eig", box=40)
    assert val == pytest.approx(K.z1_heat_kernel(1.5, 0) - K.z1_heat_kernel(1.5, 4), abs=1e-12)


def test_killing_needs_exactly_one_spec():
    with pytest.raises(ValidationError):
        K.Killing()


def test_regularized_table_vanishes_at_origin(z1):
    tab = K.regularized_resolvent_table(z1, range(-3, 4), 0)
    assert tab.table[0] == 0.0 and tab.table[3] == 3.0
    assert tab.to_csv().splitlines()[0] == "-3 3.0"


def test_log_periodic_profile_repeats():
    prof = K.hier_log_periodic(ModelSpec.hierarchical(2, 0.3, 1), t_grid=(1e2, 1e5), points_per_period=16)
    assert prof.profiles.shape[0] >= 2
    assert prof.min_correlation > 0.99


@pytest.mark.parametrize("alpha, lam, d", [(0.3, 1e-10, 0), (0.3, 1e-10, 3), (0.8, 1e-10, 20), (1.5, 1e-3, 5)])
def test_fractional_resolvent_against_high_precision_quadrature(alpha, lam, d):
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 30
    lam_ = mpmath.mpf(lam)
    f = lambda p: mpmath.cos(d * p) / (lam_ + (2 * mpmath.sin(p / 2)) ** (2 * alpha))
    scale = lam_ ** (1 / (2 * alpha))
    points = [0] + [scale * 4**k for k in range(60) if scale * 4**k < mpmath.pi] + [mpmath.pi]
    expected = -float(mpmath.quad(f, points)) / math.pi
    assert K.resolvent_value(ModelSpec.fractional(alpha), lam, 0, d) == pytest.approx(expected, rel=1e-12)
