import math

import numpy as np
import pytest

from negcount import witnesses as Wt
from negcount.core import ModelSpec, Potential, ValidationError
from negcount.spectra import n0_count


@pytest.mark.parametrize("v", [0.1, 1.0, 3.0, 10.0])
def test_z1_single_well_root(z1, v):
    assert Wt.single_delta_eigenvalue(z1, v) == pytest.approx(Wt.z1_single_well(v), rel=1e-12)


def test_z2_single_well_matches_logarithmic_asymptotics(z2):
    # R_lam(0,0) ~ -ln(32/lam)/(4 pi) as lam -> 0, so lam* ~ 32 exp(-4 pi / v)
    lam = -Wt.single_delta_eigenvalue(z2, 1.0)
    assert lam == pytest.approx(32 * math.exp(-4 * math.pi), rel=1e-3)


def test_shallow_well_on_transient_walk_does_not_bind():
    assert Wt.single_delta_eigenvalue(ModelSpec.fractional(0.3), 0.01) is None


def test_single_well_matches_box_spectrum(z2):
    v = 3.0
    summary = n0_count(z2, Potential({(0, 0): v}))
    assert summary.negative_eigenvalues[0] == pytest.approx(Wt.single_delta_eigenvalue(z2, v), rel=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3, 6])
def test_sine_bump_norm(k):
    # sum of sin^2 over a full half period of L = 7 * 2^{k-1} points is L / 2
    bump = Wt.sine_bump_1d(k)
    length = 2 ** (k + 2) - 2 ** (k - 1)
    assert bump.norm2() == pytest.approx(length / 2, rel=1e-12)
    assert bump.offset == (2 ** (k - 1),)


def test_kinetic_form_of_sine_bump():
    bump = Wt.sine_bump_1d(3)
    length = 28
    # sum_j (sin((j+1)h) - sin(j h))^2 = 4 sin^2(h/2) * L/2 with h = pi/L
    expected = 4 * math.sin(math.pi / (2 * length)) ** 2 * length / 2
    assert Wt.kinetic_form(bump) == pytest.approx(expected, rel=1e-12)


def test_square_layer_geometry():
    layer = Wt.square_layer_2d(2, 8)
    assert layer.array.shape == (33, 33)
    assert (0, 0) not in layer.support and (2, 2) not in layer.support
    assert layer.values[(3, 0)] == 1.0 and layer.values[(8, -8)] == 1.0
    assert layer.values[(12, 0)] == pytest.approx(0.5)
    assert (16, 0) not in layer.support
    with pytest.raises(ValidationError):
        Wt.square_layer_2d(2, 7)


def test_certificate_is_a_lower_bound(z1):
    v = Potential({x: 2.0 / (1 + x * x) for x in range(-200, 201)})
    bumps = [Wt.sine_bump_1d(k) for k in range(1, 6)]
    with pytest.raises(ValidationError):
        Wt.certify_lower_bound(z1, v, bumps)
    cert = Wt.certify_lower_bound(z1, v, bumps, allow_overlap=True)
    assert 1 <= cert.m <= n0_count(z1, v, eigenvalues=False).n0


def test_disjoint_wells_certify_exact_count(z1):
    v = Potential({0: 3.0, 20: 3.0, 40: 3.0, 60: 3.0, 80: 3.0})
    lam = -Wt.z1_single_well(3.0)
    functions = []
    for c in (0, 20, 40, 60, 80):
        d = np.arange(-8, 9)
        functions.append(Wt.TestFunction((c - 8,), np.exp(-2 * math.asinh(math.sqrt(lam) / 2) * np.abs(d))))
    cert = Wt.certify_lower_bound(z1, v, functions)
    assert cert.m == 5 and cert.supports_disjoint
    assert all(q < 0 for q in cert.quotients)


def test_sparse_multiwell_certificate(z1):
    v, cert = Wt.sparse_multiwell(z1, [3.0, 2.0, 1.0])
    assert cert.m == 3
    assert n0_count(z1, v, eigenvalues=False).n0 == 3


def test_multiwell_rejects_increasing_amplitudes(z1):
    with pytest.raises(ValidationError):
        Wt.sparse_multiwell(z1, [1.0, 2.0])


def test_box_count_is_monotone_in_radius(z1):
    v = Potential({x: 2.0 / (1 + x * x) for x in range(-100, 101)})
    counts = [Wt.box_count(z1, v, r) for r in (5, 20, 40)]
    assert counts == sorted(counts)
    assert counts[-1] <= n0_count(z1, v, eigenvalues=False).n0


def test_auto_square_layers_are_negative(z2):
    v = lambda coords: 50.0 / (2.0 + np.hypot(coords[:, 0], coords[:, 1])) ** 2
    layers = Wt.auto_square_layers(v, 2)
    assert len(layers) == 2
    cert = Wt.certify_lower_bound(z2, v, layers)
    assert cert.m == 2
