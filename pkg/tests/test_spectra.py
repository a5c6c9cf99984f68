import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negcount.core import ModelSpec, Potential
from negcount.operators import SparseSymmetric, assemble_h0, subtract_potential
from negcount.spectra import (
    birman_schwinger_count,
    count_below,
    count_negative,
    dense_spectrum,
    lieb_thirring_sum,
    n0_count,
)


def random_symmetric(seed, n, density):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.normal(size=(n, n)) * (rng.random((n, n)) < density), 1)
    return a + a.T + np.diag(rng.normal(size=n))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 120), st.floats(0.01, 0.5), st.floats(-2, 2))
def test_inertia_matches_dense_eigenvalues(seed, n, density, shift):
    a = random_symmetric(seed, n, density)
    ev = np.linalg.eigvalsh(a)
    if np.min(np.abs(ev - shift)) < 1e-8:
        return
    res = count_below(SparseSymmetric.from_dense(a), shift)
    assert res.negative == int(np.sum(ev < shift))
    assert res.n == n


def test_sparse_path_with_zero_diagonal_block():
    # H0 - 4 on the Z2 interior has an exactly zero diagonal, which stalls
    # diagonal-pivot factorizations
    m = ModelSpec.z2(25)
    v = Potential({s: 4.0 for s in m.sites() if max(map(abs, s)) <= 12})
    h = subtract_potential(assemble_h0(m), v)
    dense = int(np.sum(np.linalg.eigvalsh(h.toarray()) < -1e-10))
    assert count_negative(h)[0] == dense


def test_near_zero_eigenvalues_are_reported_separately():
    a = np.diag([-1.0, 0.0, 0.0, 2.0])
    assert count_negative(SparseSymmetric.from_dense(a)) == (1, 2)


def test_free_operator_has_no_negative_spectrum(z1):
    assert count_negative(assemble_h0(z1.with_radius(20)))[0] == 0


@pytest.mark.parametrize("v", [0.1, 1.0, 3.0, 10.0])
def test_single_delta_z1_eigenvalue(z1, v):
    s = n0_count(z1, Potential({0: v}))
    assert s.n0 == 1
    assert s.negative_eigenvalues[0] == pytest.approx(-(math.sqrt(4 + v * v) - 2), abs=1e-9)


def test_transient_fractional_shallow_well_has_no_bound_state():
    assert n0_count(ModelSpec.fractional(0.3), Potential({0: 0.2}), eigenvalues=False).n0 == 0


def test_dense_spectrum_sorted(z1):
    ev = dense_spectrum(assemble_h0(z1.with_radius(5)))
    assert np.all(np.diff(ev) >= 0)


def test_birman_schwinger_counts_eigenvalues_below_minus_lambda(z1):
    v = Potential({0: 2.0, 3: 1.5, -4: 1.0})
    s = n0_count(z1, v)
    for lam in (0.05, 0.3, 0.8):
        expected = sum(1 for e in s.negative_eigenvalues if e < -lam)
        assert birman_schwinger_count(z1, v, lam) == expected


def test_lieb_thirring_sum_of_single_well(z1):
    s = n0_count(z1, Potential({0: 3.0}))
    assert lieb_thirring_sum(s, 1.0) == pytest.approx(math.sqrt(13) - 2, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(st.integers(-6, 6), st.floats(0.0, 4.0), max_size=6))
def test_count_is_monotone_in_the_potential(entries):
    z1 = ModelSpec.z1()
    v = Potential(entries)
    assert n0_count(z1, v, eigenvalues=False).n0 <= n0_count(z1, v.scaled(2.0), eigenvalues=False).n0
