import numpy as np
import pytest
from hypothesis import given, strategies as st

from almpc.environment import RegressorSpec
from almpc.errors import HorizonMismatch, NoPreviousSolution, UnsupportedOrder
from almpc.excitation import (VirtualSignalSpec, expectation_determinant, expectation_matrix,
                              fallback_sequence, monte_carlo_expectation, noise_moment, pe_check,
                              pe_matrix, pe_passes, predicted_outputs, signal_spec,
                              terminal_sequence)
from almpc.plant import steady_state_from_output
from almpc.simulator import DesignCache, controller_config


@pytest.fixture(scope="module")
def setup(numerical):
    loop = numerical.loop
    cfg = controller_config(numerical, None, 0, False)
    design = DesignCache().get(loop, cfg)
    xs, us = steady_state_from_output(loop.plant, [1.0])
    return loop, cfg, design, np.asarray(xs), np.atleast_1d(us)


def test_order2_matrix_at_one():
    np.testing.assert_allclose(expectation_matrix(1.0, 0.0, 2), [[1, 1], [1, 1]])
    np.testing.assert_allclose(expectation_matrix(0.0, 1.0, 2), [[1, 0], [0, 3]])


@given(st.floats(-5, 5), st.floats(1e-3, 2.0))
def test_order2_determinant_polynomial(y, eps):
    d = np.linalg.det(expectation_matrix(y, eps, 2))
    ref = y ** 4 * eps + 3 * eps ** 3
    assert d == pytest.approx(ref, rel=1e-7, abs=1e-9 * max(1.0, y ** 6))
    assert expectation_determinant(y, eps) == ref


def test_order3_entries():
    y, e = 0.7, 0.2
    E = expectation_matrix(y, e, 3)
    # E[(y+s)^6] for gaussian s
    assert E[2, 2] == pytest.approx(y ** 6 + 15 * y ** 4 * e + 45 * y ** 2 * e ** 2 + 15 * e ** 3)
    assert E[0, 2] == pytest.approx(y ** 4 + 6 * y ** 2 * e + 3 * e ** 2)
    np.testing.assert_allclose(E, E.T)
    assert np.linalg.eigvalsh(E).min() > 0


def test_unsupported_orders():
    for n in (1, 4):
        with pytest.raises(UnsupportedOrder):
            expectation_matrix(0.5, 0.1, n)


def test_uniform_moments():
    assert noise_moment(4, 1.0, "uniform") == pytest.approx(9 / 5)
    assert noise_moment(4, 1.0) == 3.0
    assert noise_moment(3, 1.0) == 0.0


def test_monte_carlo_matches_closed_form():
    for y in (-1.0, 0.3, 2.0):
        mc = monte_carlo_expectation(y, 0.25, 2, samples=200_000, law="gaussian")
        np.testing.assert_allclose(mc, expectation_matrix(y, 0.25, 2), rtol=0.03, atol=0.01)
    mc = monte_carlo_expectation(0.5, 0.1, 2, samples=200_000, law="uniform")
    np.testing.assert_allclose(mc, expectation_matrix(0.5, 0.1, 2, law="uniform"), rtol=0.02, atol=1e-3)
    with pytest.raises(ValueError):
        monte_carlo_expectation(0.0, 1.0, 2, samples=100)


def test_signal_spec_variance(ex1):
    sig = signal_spec(0.1, ex1.plant)
    assert sig.eps_s == pytest.approx(0.01 / 3)
    assert sig.gain2 == pytest.approx(0.079 ** 2)
    d = sig.draw(np.random.default_rng(0), 100_000)
    assert np.abs(d).max() <= 0.1
    assert d.var() == pytest.approx(sig.eps_s, rel=0.02)
    with pytest.raises(ValueError):
        VirtualSignalSpec(0.0)


def test_pe_matrix_zero_outputs_is_expectation_sum():
    # origin is an equilibrium with zero input, so y = 0 along the whole window
    from almpc.plant import LiftedPlant
    plant = LiftedPlant([[0.5]], [[1.0]], [[1.0]])
    spec = RegressorSpec.monomials(2)
    sig = VirtualSignalSpec(0.3)
    eps = sig.eps_tilde
    R = pe_matrix(np.zeros(4), [0.0], plant, spec, sig, [[0.0]], [0.0], [0.0], N_u=7)
    np.testing.assert_allclose(R, 3 * np.array([[eps, 0], [0, 3 * eps ** 2]]), atol=1e-15)


def test_pe_matrix_degenerate_window_is_outer_product_sum(setup):
    loop, cfg, design, xs, us = setup
    u = np.linspace(-0.5, 0.5, cfg.N)
    x0 = np.array([0.3, 0.4])
    R = pe_matrix(u, x0, loop.plant, loop.spec, design.signal, design.K, xs, us, N_u=cfg.N)
    ys = predicted_outputs(u, x0, loop.plant, design.K, xs, us, cfg.N)
    F = loop.spec.phi(ys[:, None])
    np.testing.assert_allclose(R, F.T @ F, rtol=1e-12)
    with pytest.raises(HorizonMismatch):
        pe_matrix(u, x0, loop.plant, loop.spec, design.signal, design.K, xs, us, N_u=cfg.N - 1)


def test_zero_information_sequence_triggers_fallback(setup):
    loop, cfg, design, xs, us = setup
    parked = np.full(cfg.N, us[0])
    fb = terminal_sequence(xs, loop.plant, design.K, xs, us, design.signal, (-1.0, 1.0),
                           np.random.default_rng(0), cfg.N)
    chosen, rep = pe_check(parked, fb, xs, loop.plant, loop.spec, design.signal, design.K, xs, us,
                           N_u=cfg.N)
    assert rep.betas[0] <= 1e-12 and not rep.passed
    assert rep.fallback_used
    np.testing.assert_array_equal(chosen, fb)
    assert rep.fallback_beta > 0


def test_pass_keeps_candidate(setup):
    loop, cfg, design, xs, us = setup
    u = np.linspace(-0.5, 0.5, cfg.N)
    chosen, rep = pe_check(u, u.copy(), np.zeros(2), loop.plant, loop.spec, design.signal,
                           design.K, xs, us, cfg.N_u)
    assert rep.passed and not rep.fallback_used
    np.testing.assert_array_equal(chosen, u)


def test_fallback_shift_and_bounds(setup):
    loop, cfg, design, xs, us = setup
    prev = np.linspace(-0.8, 0.8, cfg.N)
    x0 = np.array([-0.4, 0.2])
    fb = fallback_sequence(prev, x0, loop.plant, design.K, xs, us, design.signal, (-1.0, 1.0),
                           np.random.default_rng(1))
    np.testing.assert_array_equal(fb[:-1], prev[1:])
    assert len(fb) == cfg.N and np.all(np.abs(fb) <= 1.0)
    R = pe_matrix(fb, x0, loop.plant, loop.spec, design.signal, design.K, xs, us, cfg.N_u)
    assert pe_passes(R)
    with pytest.raises(NoPreviousSolution):
        fallback_sequence(None, x0, loop.plant, design.K, xs, us, design.signal, (-1, 1),
                          np.random.default_rng(0))


@given(st.floats(-3, 3))
def test_expectation_is_positive_definite(y):
    assert np.linalg.eigvalsh(expectation_matrix(y, 0.05, 2)).min() > 0
