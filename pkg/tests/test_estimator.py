import numpy as np
import pytest
from hypothesis import given, strategies as st

from almpc.environment import scenario
from almpc.estimator import Estimator, degenerate_estimate, nonfalsified_set
from almpc.polytope import box, is_subset, volume


def make_est(loop, seed=0, samples=2000):
    return Estimator(loop.plant, loop.constraints, loop.spec, loop.V, loop.theta0,
                     samples=samples, seed=seed)


def test_slab_examples(ex1):
    D = nonfalsified_set(ex1.spec, ex1.V, [1.0], 0.0)
    ref = [([0.0, 0.0], True), ([2.0, 0.0], True), ([1.0, 1.5], False), ([-1.0, 0.5], False)]
    for th, inside in ref:
        assert D.contains(th) == inside
    # 0 <= t1 + t2 <= 2 exactly
    assert D.contains([0.0, 2.0]) and not D.contains([0.0, 2.0 + 1e-6])
    D0 = nonfalsified_set(ex1.spec, ex1.V, [0.0], -1.0)
    assert D0.contains([-2.0, 100.0]) and D0.contains([0.0, -5.0])
    assert not D0.contains([0.1, 0.0]) and not D0.contains([-2.1, 0.0])
    assert D.contains([-1.0, 2.0]) and D0.contains([-1.0, 2.0])


def test_update_shrinks_and_is_idempotent(ex1):
    est = make_est(ex1)
    v0 = volume(est.estimate.theta_set)
    assert v0 == pytest.approx(29.8233, abs=1e-3)
    e1 = est.update([1.0], 0.0)
    assert e1.volume < v0
    assert is_subset(e1.theta_set, ex1.theta0)
    e2 = est.update([1.0], 0.0)
    assert not e2.changed
    assert e2.theta_set.same_as(e1.theta_set)


def test_falsification_resets_to_prior(ex1):
    est = make_est(ex1)
    e = est.update([1.0], 1000.0)
    assert e.reset and est.resets == 1
    assert e.theta_set.same_as(est.estimate.theta_set)
    assert is_subset(e.theta_set, ex1.theta0) and is_subset(ex1.theta0, e.theta_set)


def test_degenerate_moments(ex1):
    e = degenerate_estimate(ex1.plant, ex1.constraints, ex1.spec, [-1.0, 2.0], half_width=5e-7)
    assert e.r_bar == pytest.approx(1.0, abs=1e-6)
    assert e.P_r <= 1e-12
    np.testing.assert_allclose(e.xs_bar, [-20.0, 1.0], atol=1e-4)


def test_symmetric_set_has_zero_mean_reference(ex1):
    est = Estimator(ex1.plant, ex1.constraints, ex1.spec, ex1.V, box([-1, -2], [1, 2]), seed=3)
    assert abs(est.estimate.r_bar) < 0.05


def test_covariance_propagation(ex1):
    est = make_est(ex1, seed=1)
    e = est.estimate
    mapped = np.outer(e.r_samples, ex1.plant.Mx[:, 0])
    C = np.cov(mapped.T, bias=True)
    np.testing.assert_allclose(e.P_x, C, rtol=0.1, atol=1e-12)
    np.testing.assert_allclose(e.P_x, np.outer(ex1.plant.Mx[:, 0], ex1.plant.Mx[:, 0]) * e.P_r)


def test_moment_determinism(ex1):
    a, b = make_est(ex1, seed=9), make_est(ex1, seed=9)
    for est in (a, b):
        est.update([0.5], -0.25)
    np.testing.assert_array_equal(a.estimate.samples, b.estimate.samples)
    assert a.estimate.r_bar == b.estimate.r_bar


def test_shrinking_boxes_converge(ex1):
    prev = None
    for w in (1.0, 0.1, 0.01, 0.001):
        e = degenerate_estimate(ex1.plant, ex1.constraints, ex1.spec, [-1.0, 2.0], half_width=w,
                                samples=500)
        err = abs(e.r_bar - 1.0) + e.P_r
        if prev is not None:
            assert err <= prev + 1e-12
        prev = err
    assert prev < 1e-3


def test_info_state_is_append_only(ex1):
    est = make_est(ex1, samples=200)
    est.update([0.0], -1.0, None)
    est.update([0.2], -0.9, [0.3])
    assert est.info == [(-1.0, None), (-0.9, 0.3)]


@given(st.integers(0, 1000))
def test_stationary_truth_stays_inside_and_sets_nest(seed):
    loop = scenario("numerical").loop
    est = make_est(loop, seed=seed, samples=100)
    env = loop.environment(seed)
    rng = np.random.default_rng(seed)
    prev = est.estimate.theta_set
    for _ in range(6):
        y = [rng.uniform(-1.5, 1.5)]
        e = est.update(y, env.measure(y))
        assert not e.reset
        assert e.theta_set.contains(loop.theta_star, tol=1e-7)
        assert is_subset(e.theta_set, prev)
        assert e.P_r >= 0
        assert e.theta_set.contains(e.theta_bar, tol=1e-7)
        prev = e.theta_set
