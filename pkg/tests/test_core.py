import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negcount.core import (
    Family,
    ModelSpec,
    Potential,
    ToleranceConfig,
    ValidationError,
    hier_distance,
    hier_distance_raw,
    make_potential,
    make_rng,
    read_potential,
    write_potential,
)


def test_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, 1).random(5)
    assert np.array_equal(a, make_rng(7, 1).random(5))
    assert not np.array_equal(a, make_rng(7, 2).random(5))


@pytest.mark.parametrize("field", ["neg_threshold", "quad_tol", "extrap_tol"])
def test_tolerances_must_be_positive(field):
    with pytest.raises(ValidationError):
        ToleranceConfig(**{field: 0.0})


def test_model_constructors_validate_parameters():
    with pytest.raises(ValidationError):
        ModelSpec.fractional(2.5)
    with pytest.raises(ValidationError):
        ModelSpec.hierarchical(1, 0.5, 3)
    with pytest.raises(ValidationError):
        ModelSpec(Family.Z1, alpha=0.5)


@pytest.mark.parametrize(
    "model, recurrent",
    [
        (ModelSpec.z1(), True),
        (ModelSpec.z2(), True),
        (ModelSpec.fractional(0.3), False),
        (ModelSpec.fractional(0.5), True),
        (ModelSpec.hierarchical(2, 0.5, 3), True),
        (ModelSpec.hierarchical(2, 0.7, 3), False),
    ],
)
def test_recurrence_classification(model, recurrent):
    assert model.is_recurrent() is recurrent


def test_hierarchical_spectral_dimension():
    assert ModelSpec.hierarchical(2, 0.5, 3).spectral_dimension() == pytest.approx(2.0)
    assert ModelSpec.hierarchical(4, 0.25, 3).spectral_dimension() == pytest.approx(2.0)


def test_hierarchical_distance_examples():
    m = ModelSpec.hierarchical(2, 0.5, 4)
    assert hier_distance(0, 0, m) == 0
    assert hier_distance(0, 1, m) == 1
    assert hier_distance(1, 2, m) == 2
    assert hier_distance(3, 4, m) == 3


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6), st.sampled_from([2, 3, 5]))
def test_hierarchical_distance_is_an_ultrametric(x, y, z, nu):
    dxy, dyz, dxz = (hier_distance_raw(a, b, nu) for a, b in ((x, y), (y, z), (x, z)))
    assert dxy == hier_distance_raw(y, x, nu)
    assert dxz <= max(dxy, dyz)
    assert (dxy == 0) == (x == y)


def test_potential_rejects_negative_and_nonfinite_values():
    with pytest.raises(ValidationError):
        Potential({0: -1.0})
    with pytest.raises(ValidationError):
        Potential({0: math.nan})


def test_random_potentials_depend_only_on_seed():
    a = make_potential("random_uniform", {"radius": 5, "vmax": 2.0}, seed=3)
    b = make_potential("random_uniform", {"radius": 5, "vmax": 2.0}, seed=3)
    assert dict(a.items()) == dict(b.items())
    assert all(0 <= v <= 2.0 for _, v in a.items())


def test_power_law_potential_values():
    v = make_potential("power_law", {"beta": 2.0, "s": 1.0, "radius": 3, "dim": 1})
    assert v[3] == pytest.approx(0.5)
    assert v.support_radius() == 3


@settings(max_examples=30)
@given(st.dictionaries(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), st.floats(0, 1e6), max_size=20))
def test_potential_file_round_trip(tmp_path_factory, entries):
    path = tmp_path_factory.mktemp("pot") / "v.txt"
    v = Potential(entries)
    write_potential(v, path)
    assert dict(read_potential(path).items()) == dict(v.items())


def test_read_potential_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 1.0\n1 2 3 4\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_potential(path)
