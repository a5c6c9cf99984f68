import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negcount import bounds as B
from negcount.core import DivergenceError, ModelSpec, Potential, ValidationError
from negcount.spectra import lieb_thirring_sum, n0_count

z1_potentials = st.dictionaries(st.integers(-8, 8), st.floats(0.0, 3.0), min_size=1, max_size=5).map(Potential)


# saturation at the origin and a single linear term
def test_bargmann_examples():
    z1 = ModelSpec.z1()
    assert B.bargmann_general(z1, Potential({0: 5.0})).value == 1.0
    assert B.bargmann_general(z1, Potential({2: 0.2})).value == pytest.approx(1.4)
    assert B.bargmann_1d(Potential({2: 0.2})).value == pytest.approx(1.4)
    # R~ = d_h + 1 = 2 at distance 1 with nu p = 1, and min(1, 0.5 * 2) = 1
    hier = ModelSpec.hierarchical(2, 0.5, 3)
    assert B.bargmann_general(hier, Potential({1: 0.5})).value == pytest.approx(2.0)


def test_bargmann_contributions_csv():
    rep = B.bargmann_1d(Potential({-1: 0.5, 3: 0.1}))
    assert rep.contributions_csv() == "-1 0.5\n3 0.30000000000000004\n"
    assert rep.to_dict()["bound_id"] == "bargmann_1d_lattice"


def test_bargmann_rejects_transient_walk():
    with pytest.raises(DivergenceError):
        B.bargmann_general(ModelSpec.fractional(0.3), Potential({0: 1.0}))


@settings(max_examples=30, deadline=None)
@given(z1_potentials, st.integers(-4, 4))
def test_bargmann_dominates_count_on_z1(v, x0):
    n0 = n0_count(ModelSpec.z1(), v, eigenvalues=False).n0
    assert n0 <= B.bargmann_general(ModelSpec.z1(), v, x0=x0).value + 1e-12


@settings(max_examples=15, deadline=None)
@given(z1_potentials)
def test_clr_sigma_zero_reduces_to_linear_bargmann(v):
    # with sigma = 0 the killed tail is R~ itself, without the min(1, .) cap
    z1 = ModelSpec.z1()
    clr = B.clr_estimate(z1, v, sigma=0.0, killed=0)
    linear = 1 + sum(abs(x) * val for x, val in v.normalized(z1).items())
    assert clr.value == pytest.approx(linear, rel=1e-9, abs=1e-12)


def test_clr_dominates_count_for_transient_walk():
    frac = ModelSpec.fractional(0.3)
    v = Potential({0: 1.0, 3: 0.5})
    assert n0_count(frac, v).n0 <= B.clr_estimate(frac, v, sigma=1.0).value


def test_clr_unkilled_recurrent_is_infinite():
    with pytest.raises(DivergenceError):
        B.clr_estimate(ModelSpec.z1(), Potential({0: 1.0}))


def test_family_bound_needs_constant():
    with pytest.raises(ValidationError):
        B.family_closed_bound("z2_log", Potential({(0, 0): 1.0}), {})
    with pytest.raises(ValidationError):
        B.family_closed_bound("no_such_bound", Potential({0: 1.0}), {"C": 1})


def test_z2_log_bound_value():
    v = Potential({(0, 0): 0.5, (3, 4): 0.2})
    rep = B.family_closed_bound("z2_log", v, {"C": 2.0})
    assert rep.value == pytest.approx(1 + 2 * (0.5 * math.log(2) + 0.2 * math.log(7)))
    assert rep.constants["C"] == (2.0, "calibrated")


def test_calibrated_constant_dominates_corpus():
    corpus = [Potential({(0, 0): a, (2, 1): a / 2}) for a in (0.5, 2.0, 5.0)]
    cal = B.calibrate_constant("z2_log", corpus, {})
    for v, n in zip(corpus, cal.counts):
        assert B.family_closed_bound("z2_log", v, {"C": cal.constant}).value >= n - 1e-9
    # the constant is tight on at least one potential
    assert max(cal.per_potential) == cal.constant


def test_frac_transient_requires_small_alpha():
    with pytest.raises(ValidationError):
        B.family_closed_bound("frac_transient", Potential({0: 1.0}), {"alpha": 0.7, "C": 1.0})


@pytest.mark.parametrize("gamma", [0.25, 0.5, 1.0])
def test_lieb_thirring_lit9a_dominates_single_well(gamma):
    z1 = ModelSpec.z1()
    v = Potential({0: 3.0, 2: 1.0})
    s = n0_count(z1, v)
    bound = B.lieb_thirring_bound("lit9a", z1, v, gamma)
    assert lieb_thirring_sum(s, gamma) <= bound.value


def test_lieb_thirring_rejects_bad_input():
    z1 = ModelSpec.z1()
    with pytest.raises(ValidationError):
        B.lieb_thirring_bound("nope", z1, Potential({0: 1.0}), 0.5)
    with pytest.raises(ValidationError):
        B.lieb_thirring_bound("lit9a", z1, Potential({0: 1.0}), 0.5, Lambda=0.5)
    with pytest.raises(DivergenceError):
        B.lieb_thirring_bound("lit", z1, Potential({0: 1.0}), 0.5)


def test_lieb_thirring_unkilled_transient_dominates():
    frac = ModelSpec.fractional(0.3)
    v = Potential({0: 1.0, 3: 0.5})
    s = n0_count(frac, v)
    assert lieb_thirring_sum(s, 1.0) <= B.lieb_thirring_bound("lit", frac, v, 1.0, sigma=1.0).value


def test_lattice_bargmann_and_lit9a_worked_values():
    z1 = ModelSpec.z1()
    v = Potential({5: 3.0})
    assert B.bargmann_1d(v).value == 16.0
    assert B.bargmann_1d(Potential.zero()).value == 1.0
    lt = B.lieb_thirring_bound("lit9a", z1, v, 1.0, Lambda=3.0)
    assert lt.value == pytest.approx(3 + 9 * 5)
    assert lt.value >= lieb_thirring_sum(n0_count(z1, v), 1.0)


def test_calibrated_bound_carries_exact_alternative():
    v = Potential({(0, 0): 0.5, (3, 1): 0.2})
    rep = B.attach_exact_alternative(B.family_closed_bound("z2_log", v, {"C": 1.0}), v, {"C": 1.0, "x0": [0, 0]})
    alt = rep.to_dict()["exact_alternative"]
    assert alt["authoritative"] and alt["bound_id"] == "bargmann_general"
    assert alt["value"] == pytest.approx(B.bargmann_general(ModelSpec.z2(), v).value)
    # no R~ for a transient walk, so no exact counterpart
    w = Potential({0: 0.5})
    params = {"C": 1.0, "alpha": 0.3}
    assert B.attach_exact_alternative(B.family_closed_bound("frac_transient", w, params), w, params).alternative is None
