import numpy as np
import pytest
from hypothesis import given, strategies as st

from almpc.environment import (RegressorSpec, drone_theta, light_intensity, optimum_map,
                               optimum_map_batch, pv_power, pv_prior, pv_spec, pv_theta, scenario)
from almpc.errors import NoUniqueExtremum, UnknownScenario
from almpc.plant import output_bounds


def test_example1_measurements(ex1):
    env = ex1.environment(0)
    assert env.measure([1.0], noise=0.0) == pytest.approx(0.0)
    assert env.measure([0.0], noise=0.0) == pytest.approx(-1.0)
    draws = np.array([env.measure([0.3]) - env.noise_free([0.3]) for _ in range(10_000)])
    assert draws.min() >= -1.0 and draws.max() <= 1.0


def test_measurement_determinism(ex1):
    a = [ex1.environment(5).measure([0.2]) for _ in range(1)]
    b = [ex1.environment(5).measure([0.2]) for _ in range(1)]
    assert a == b


def test_optimum_map_example1(ex1):
    lo, hi = ex1.output_box()
    assert optimum_map(ex1.spec, [-1.0, 2.0], lo, hi) == pytest.approx(1.0, abs=1e-9)
    assert optimum_map(ex1.spec, [-1.0, 0.0], lo, hi) == pytest.approx(0.0, abs=1e-9)


@given(st.floats(-50.0, 50.0), st.floats(-5, 5))
def test_optimum_map_is_half_theta2(t2, t1):
    loop = scenario("numerical").loop
    lo, hi = loop.output_box()
    assert optimum_map(loop.spec, [t1, t2], lo, hi) == pytest.approx(t2 / 2.0, abs=1e-9)


def test_optimum_map_ties_and_boundaries():
    spec = RegressorSpec.monomials(2)
    # y^2 on [-1, 1]: both endpoints tie
    with pytest.raises(NoUniqueExtremum):
        optimum_map(spec, [0.0, 1.0], [-1.0], [1.0])
    # increasing line: boundary maximum with nonzero slope
    with pytest.raises(NoUniqueExtremum):
        optimum_map(spec, [1.0, 0.0], [-1.0], [1.0])


def test_mppt_argmax_matches_dense_grid():
    spec = pv_spec()
    V = np.linspace(20.0, 36.0, 1_000_001)
    for g in (1.0, 0.6, 0.85):
        th = pv_theta(g, spec)
        grid_arg = V[np.argmax(spec.phi(V) @ th)]
        assert optimum_map(spec, th, [20.0], [36.0]) == pytest.approx(grid_arg, abs=1e-4)


def test_mppt_fit_tracks_the_diode_curve():
    spec = pv_spec()
    V = np.linspace(20.0, 36.0, 400)
    for g in (0.3, 1.0, 1.1):
        assert np.max(np.abs(spec.phi(V) @ pv_theta(g, spec) - pv_power(V, g))) < 5e-3
    prior = pv_prior(spec)
    for g in np.linspace(0.3, 1.1, 9):
        assert prior.contains(pv_theta(g, spec))


def test_batch_matches_single(ex1, rng):
    lo, hi = ex1.output_box()
    th = rng.uniform(-3, 3, (20, 2))
    batch = optimum_map_batch(ex1.spec, th, lo, hi)[:, 0]
    np.testing.assert_allclose(batch, th[:, 1] / 2, atol=1e-9)


def test_drone_surrogate_peaks_at_the_light():
    for s in (-1.5, 0.0, 2.0):
        spec = RegressorSpec([(0,), (1,), (2,)])
        assert optimum_map(spec, drone_theta(s), [-5.0], [5.0]) == pytest.approx(s, abs=1e-9)
    # the inverse-square intensity is maximized at the same point
    p = np.linspace(-5, 5, 2001)
    assert p[np.argmax(light_intensity(p, 0.0, 1.0, 0.0))] == pytest.approx(1.0, abs=1e-2)


def test_scenarios_build():
    sc = scenario("numerical")
    np.testing.assert_allclose(sc.loop.plant.A, [[1.1, 2.0], [0.0, 0.95]])
    np.testing.assert_allclose(sc.loop.theta_star, [-1.0, 2.0])
    lo, hi = output_bounds(sc.loop.plant, sc.loop.constraints)
    assert (lo[0], hi[0]) == (-25.0, 25.0)
    mp = scenario("mppt")
    assert mp.loop.plant.A[0, 0] == 1.0 and mp.loop.spec.order == 10
    dr = scenario("drone")
    assert len(dr.loops) == 2
    with pytest.raises(UnknownScenario):
        scenario("nope")


def test_schedule_switches_theta():
    mp = scenario("mppt")
    r = [mp.loop.r_star(k) for k in (0, 99, 100, 199, 200)]
    assert r[0] == r[1] and r[2] == r[3] and r[0] != r[2] != r[4]


def test_overrides():
    sc = scenario("numerical", {"theta_star": [-1.0, 1.0], "x0": [0.0, 0.5], "steps": 10})
    assert sc.steps == 10
    assert sc.loop.r_star(0) == pytest.approx(0.5)
    with pytest.raises(KeyError):
        scenario("numerical", {"bogus": 1})
    sc = scenario("mppt", {"irradiance": [{"step": 0, "irradiance": 0.5}]})
    assert sc.loop.schedule == []


def test_repeatable_construction():
    a, b = scenario("numerical"), scenario("numerical")
    ea, eb = a.loop.environment(3), b.loop.environment(3)
    assert [ea.measure([0.1]) for _ in range(5)] == [eb.measure([0.1]) for _ in range(5)]


@given(st.floats(-20, 20))
def test_measurement_minus_model_in_noise_set(y):
    loop = scenario("drone").loops[0]
    env = loop.environment(int(abs(y) * 1000) % 97)
    v = env.measure([y]) - env.noise_free([y])
    assert loop.V.contains([v])
