import math

import numpy as np
import pytest
from scipy import integrate
from scipy.linalg import expm

from negcount import walks as W
from negcount.core import ModelSpec, Potential, ValidationError
from negcount.kernels import resolvent_value, z1_heat_kernel

# Monte-Carlo comparisons use 4 standard errors; the seeds are fixed, so the
# tests are deterministic.
Z_SCORE = 4.0


def exact_laplace(model, lam, x, target):
    return resolvent_value(model, lam, x, target) / resolvent_value(model, lam, target, target)


def test_runs_are_reproducible():
    cfg = W.WalkConfig(ModelSpec.z1(), 3, t_cap=200.0, seed=7, n_walks=500)
    a = W.hitting_time(cfg, 0).samples
    b = W.hitting_time(cfg, 0).samples
    np.testing.assert_array_equal(a, b)


def test_results_do_not_depend_on_worker_count():
    base = W.WalkConfig(ModelSpec.z1(), 3, t_cap=200.0, seed=7, n_walks=700)
    one = W.laplace_hitting_mc(base, 0, 0.5).samples
    two = W.laplace_hitting_mc(W.WalkConfig(base.model, 3, 200.0, seed=7, n_walks=700, workers=2), 0, 0.5).samples
    np.testing.assert_array_equal(one, two)


@pytest.mark.parametrize(
    "model, start, target, lam",
    [
        (ModelSpec.z1(), 3, 0, 0.5),
        (ModelSpec.z2(), (1, 1), (0, 0), 0.3),
        (ModelSpec.hierarchical(2, 0.5, 4), 5, 0, 0.3),
    ],
)
def test_laplace_transform_of_hitting_time(model, start, target, lam):
    cfg = W.WalkConfig(model, start, t_cap=300.0, seed=11, n_walks=4000)
    stats = W.laplace_hitting_mc(cfg, target, lam)
    exact = exact_laplace(model, lam, start, target)
    assert abs(stats.estimate - exact) < Z_SCORE * stats.std_error + stats.extras["bias_bound"]


def test_occupation_time_matches_heat_kernel_integral():
    cfg = W.WalkConfig(ModelSpec.z1(), 0, t_cap=5.0, seed=2, n_walks=4000)
    stats = W.occupation_time(cfg, [0])
    exact = integrate.quad(lambda t: z1_heat_kernel(t, 0), 0, 5.0)[0]
    assert abs(stats.estimate - exact) < Z_SCORE * stats.std_error


def test_constant_killing_rate_survival_is_exponential():
    stats = W.killed_survival(W.WalkConfig(ModelSpec.z1(), 0, t_cap=2.0), 0.25)
    assert stats.estimate == math.exp(-0.5)


def test_site_killing_survival_matches_semigroup():
    t, q, radius = 2.0, 0.5, 30
    n = 2 * radius + 1
    h = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    h[radius, radius] += q
    exact = expm(-t * h)[radius].sum()
    stats = W.killed_survival(W.WalkConfig(ModelSpec.z1(), 0, t_cap=t, seed=3, n_walks=4000), Potential({0: q}))
    assert abs(stats.estimate - exact) < Z_SCORE * stats.std_error


def test_fractional_walks_are_rejected():
    with pytest.raises(ValidationError):
        W.WalkConfig(ModelSpec.fractional(0.5), 0)


def test_hitting_cdf_limit_law():
    assert W.hitting_cdf_limit(1.5) == 0.0
    assert W.hitting_cdf_limit(4.0) == 0.5


def test_hitting_cdf_experiment_needs_long_enough_cap():
    cfg = W.WalkConfig(ModelSpec.z2(), (0, 0), t_cap=100.0, n_walks=10)
    with pytest.raises(ValidationError):
        W.hitting_cdf_experiment(10, [2.5, 3.0], cfg)


def test_hierarchical_jumps_stay_inside_rank_cubes():
    model = ModelSpec.hierarchical(2, 0.5, 4)
    path = W.simulate_walk(W.WalkConfig(model, 0, t_cap=50.0, seed=5, n_walks=1))
    for a, b, r in zip(path.sites[:-1], path.sites[1:], path.ranks):
        assert a // 2**r == b // 2**r
