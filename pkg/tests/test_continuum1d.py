import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negcount import continuum1d as C
from negcount.core import InvariantViolation, ValidationError


@pytest.mark.parametrize("depth, expected", [(0.01, 1), (1.0, 1), (10.0, 3), (30.0, 4)])
def test_square_well_counts(depth, expected):
    assert C.square_well_count(depth) == expected
    assert C.prufer_count(C.square_well(depth)).node_count == expected


def square_well_oracle(depth, a=1.0):
    """Count the roots of the even/odd matching conditions by sign changes on a fine k grid."""
    k = np.linspace(1e-9, math.sqrt(depth) - 1e-9, 200_001)
    q = np.sqrt(depth - k**2)
    even = q * np.tan(q * a) - k
    odd = -q / np.tan(q * a) - k
    roots = 0
    for f in (even, odd):
        s = np.sign(f)
        # a true root keeps |f| small; tan poles flip the sign through infinity
        flips = np.nonzero((s[:-1] * s[1:] < 0) & (np.abs(f[:-1]) + np.abs(f[1:]) < 1.0))[0]
        roots += flips.size
    return roots


# the floor formula against root counting of the matching conditions
@pytest.mark.parametrize("depth", [0.5, 3.0, 7.0, 12.0, 25.0])
def test_square_well_formula_against_matching_conditions(depth):
    assert C.square_well_count(depth) == square_well_oracle(depth)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 40.0).filter(lambda d: abs((2 * math.sqrt(d) / math.pi) % 1 - 0.5) < 0.45))
def test_prufer_matches_square_well_formula(depth):
    assert C.prufer_count(C.square_well(depth)).node_count == C.square_well_count(depth)


@pytest.mark.parametrize("depth", [1.0, 10.0, 30.0])
def test_discretized_count_agrees(depth):
    assert C.discretized_count(C.square_well(depth)) == C.square_well_count(depth)


def test_gaussian_bump_counts_agree():
    v = C.GridPotential.from_function(lambda x: 6.0 * math.exp(-(x**2)), -6, 6)
    assert C.prufer_count(v).node_count == C.discretized_count(v)


def test_killed_kernel_integral_is_distance():
    for x in (0.5, 2.0):
        assert C.killed_kernel_integral(x) == pytest.approx(x, rel=1e-8)
    assert C.killed_kernel_integral(0.0) == 0.0


def test_F_gamma():
    # F(0) = int_0^inf (1 - e^{-1/tau})/sqrt(4 pi tau) dtau = 1
    assert C.F_gamma(0.0) == pytest.approx(1.0, rel=1e-9)
    assert C.F_gamma(1.0) < C.F_gamma(0.5) < 1.0
    with pytest.raises(ValidationError):
        C.F_gamma(-1.0)


def test_grid_potential_round_trip(tmp_path):
    v = C.GridPotential.from_function(lambda x: x * x, -1.0, 1.0, n=11)
    path = tmp_path / "v.txt"
    v.write(path)
    w = C.GridPotential.read(path)
    np.testing.assert_array_equal(v.nodes, w.nodes)
    np.testing.assert_array_equal(v.values, w.values)


def test_grid_potential_read_reports_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 1\n1 2 3\n")
    with pytest.raises(ValidationError, match="line 2"):
        C.GridPotential.read(path)


def test_grid_potential_validation():
    with pytest.raises(ValidationError):
        C.GridPotential(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValidationError):
        C.GridPotential(np.array([0.0, 1.0]), np.array([1.0, -1.0]))


def test_bounds_dominate_square_well():
    comp = C.verify_continuum_bounds(C.square_well(10.0))
    assert comp.count == 3 and comp.dominated
    assert comp.bargmann.value == pytest.approx(11.0, rel=1e-6)


def test_violation_is_reported(monkeypatch):
    from negcount.bounds import BoundReport

    monkeypatch.setattr(C, "bargmann_1d", lambda v, lattice=False: BoundReport.build("fake", 0, {}))
    with pytest.raises(InvariantViolation):
        C.verify_continuum_bounds(C.square_well(10.0), sigma=None)


def test_lieb_thirring_bound_needs_lambda_above_potential():
    v = C.square_well(2.0)
    assert C.continuum_lieb_thirring_bound(v, 0.5) == pytest.approx(math.sqrt(2) + 2.0**1.5, rel=1e-6)
    with pytest.raises(ValidationError):
        C.continuum_lieb_thirring_bound(v, 0.5, Lambda=1.0)
