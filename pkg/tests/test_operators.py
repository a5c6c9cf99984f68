import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma as gamma_fn

from negcount.core import ModelSpec, Potential, ValidationError
from negcount.operators import (
    GeneratorTable,
    SparseSymmetric,
    assemble_h0,
    dirichlet_at,
    fractional_coefficients,
    path_graph_table,
    read_matrix,
    subtract_potential,
    write_matrix,
)


def recurrence_coefficients(alpha, n):
    """t(k) from t(0) = Gamma(2a+1)/Gamma(a+1)^2 and t(k+1)/t(k) = (k-a)/(k+a+1)."""
    t = [gamma_fn(2 * alpha + 1) / gamma_fn(alpha + 1) ** 2]
    for k in range(n):
        t.append(t[-1] * (k - alpha) / (k + alpha + 1))
    return np.array(t)


def test_z1_radius_one_spectrum():
    h = assemble_h0(ModelSpec.z1(1)).toarray()
    assert np.allclose(h, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
    assert np.allclose(np.linalg.eigvalsh(h), [2 - math.sqrt(2), 2, 2 + math.sqrt(2)])


def test_z2_interior_rows_sum_to_zero():
    h = assemble_h0(ModelSpec.z2(3)).tocsr()
    sums = np.asarray(h.sum(axis=1)).ravel()
    interior = [i for i, s in enumerate(ModelSpec.z2(3).sites()) if max(map(abs, s)) < 3]
    assert np.allclose(sums[interior], 0.0)


def test_fractional_alpha_one_is_the_laplacian():
    c = fractional_coefficients(1.0, 4)
    assert c.values == pytest.approx([2.0, -1.0, 0.0, 0.0, 0.0], abs=1e-12)


def test_fractional_alpha_half_values():
    c = fractional_coefficients(0.5, 2)
    assert c[0] == pytest.approx(4 / math.pi, abs=1e-12)
    assert c[1] == pytest.approx(-4 / (3 * math.pi), abs=1e-12)
    assert c[-1] == c[1]


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 1.95))
def test_fractional_quadrature_matches_gamma_recurrence(alpha):
    c = fractional_coefficients(alpha, 60)
    assert np.allclose(c.values, recurrence_coefficients(alpha, 60), atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 1.0))
def test_fractional_generator_sign(alpha):
    c = fractional_coefficients(alpha, 80)
    assert np.all(c.values[1:] <= 1e-9)
    # symbol vanishes at phi = 0: the truncated row sum is the dropped tail
    assert abs(c.symbol_at_zero()) <= 2.5 * c.tail_estimate + 1e-9


def test_fractional_alpha_above_one_has_positive_offdiagonal():
    assert fractional_coefficients(1.5, 10).values[1:].max() > 1e-6


def test_hierarchical_two_site_spectrum():
    h = assemble_h0(ModelSpec.hierarchical(2, 0.5, 1)).toarray()
    assert np.allclose(h.sum(axis=1), 0)
    assert np.allclose(np.linalg.eigvalsh(h), [0.0, 0.5])


@pytest.mark.parametrize("nu, p, levels", [(2, 0.3, 5), (3, 0.4, 3), (2, 0.5, 6)])
def test_hierarchical_truncated_spectrum(nu, p, levels):
    ev = np.linalg.eigvalsh(assemble_h0(ModelSpec.hierarchical(nu, p, levels)).toarray())
    expected = [0.0]
    for k in range(1, levels + 1):
        expected += [p ** (k - 1) - p**levels] * ((nu - 1) * nu ** (levels - k))
    assert np.allclose(ev, np.sort(expected), atol=1e-12)


def test_subtract_potential_changes_only_the_diagonal(z1):
    h0 = assemble_h0(z1.with_radius(4))
    h = subtract_potential(h0, Potential({0: 3.0, 2: 0.5}))
    diff = h0.toarray() - h.toarray()
    assert np.allclose(np.diag(diff)[[4, 6]], [3.0, 0.5])
    assert np.count_nonzero(diff) == 2


def test_potential_outside_box_is_rejected(z1):
    with pytest.raises(ValidationError):
        subtract_potential(assemble_h0(z1.with_radius(2)), Potential({5: 1.0}))


def test_dirichlet_removes_the_site(z1):
    h = dirichlet_at(assemble_h0(z1.with_radius(3)), 0)
    assert 0 not in h.sites and h.n == 6


def test_generator_table_validation():
    with pytest.raises(ValidationError, match="off-diagonal"):
        GeneratorTable({(0, 1): 1.0, (0, 0): -1.0, (1, 1): -1.0}, c0=2).validate()
    disconnected = GeneratorTable({(0, 0): 0.0, (1, 1): 0.0}, c0=1)
    with pytest.raises(ValidationError, match="components"):
        disconnected.validate()
    path_graph_table(3).validate()


def test_general_graph_assembly_matches_table():
    m = ModelSpec.general(path_graph_table(2))
    h = assemble_h0(m).toarray()
    assert np.allclose(h.sum(axis=1), 0)
    assert h[0, 0] == 1 and h[2, 2] == 2


@settings(max_examples=20)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_matrix_triplet_round_trip(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.5)
    a = a + a.T
    h = SparseSymmetric.from_dense(a)
    path = tmp_path_factory.mktemp("mat") / "h.txt"
    write_matrix(h, path)
    header = path.read_text().splitlines()[0].split()
    assert int(header[0]) == n
    assert np.array_equal(read_matrix(path).toarray(), a)
