import numpy as np
import pytest

from almpc.eo_mpc import (ControllerConfig, EOController, prediction_matrices, rollout,
                          stochastic_cost, trace_constant)
from almpc.errors import Infeasible
from almpc.estimator import Estimator, degenerate_estimate
from almpc.plant import steady_state_from_output
from almpc.simulator import DesignCache, controller_config

XS1 = np.array([-20.0, 1.0])
US1 = 0.05 / 0.079


def make(numerical, **over):
    lp = numerical.loop
    cfg = controller_config(numerical, over, 0, over.pop("strict", False) if "strict" in over else False)
    design = DesignCache().get(lp, cfg)
    return EOController(lp.plant, lp.constraints, design, lp.spec, cfg), lp


def test_config_validation():
    assert ControllerConfig(N=4).N_u == 9
    for bad in ({"N": 1}, {"N": 5, "N_u": 5}, {"M": 0}, {"s_max": 0.0}):
        with pytest.raises(ValueError):
            ControllerConfig(**bad)
    with pytest.raises(ValueError):
        ControllerConfig(R=[[0.0]]).weights(2, 1, 1)
    with pytest.raises(ValueError):
        ControllerConfig(Q=[[1.0, 2.0], [0.0, 1.0]]).weights(2, 1, 1)


def test_prediction_matrices_match_rollout(ex1, rng):
    Phi, Gam = prediction_matrices(ex1.plant, 6)
    x0 = rng.normal(size=2)
    u = rng.normal(size=6)
    traj = rollout(ex1.plant, x0, u)
    for i in range(7):
        np.testing.assert_allclose(Phi[i] @ x0 + Gam[i] @ u, traj[i], atol=1e-12)


def test_fixed_point_at_optimum(numerical):
    ctl, lp = make(numerical)
    est = degenerate_estimate(lp.plant, lp.constraints, lp.spec, [-1.0, 2.0])
    sol = ctl.solve(XS1, est)
    assert sol.feasible
    assert sol.u0 == pytest.approx(0.6329114, abs=1e-6)
    assert sol.rs == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(sol.xs, XS1, atol=1e-5)
    assert sol.J_ET == pytest.approx(0.0, abs=1e-9)


def test_reference_beyond_reach_is_clipped(numerical):
    ctl, lp = make(numerical, D=1e6)
    sol = ctl.solve_qp(XS1, 30.0)
    far = ctl.solve_qp(XS1, 100.0)
    # the largest admissible steady output is set by x1 = -20 y and the terminal margin
    assert 1.0 < sol.rs < 1.25
    assert far.rs == pytest.approx(sol.rs, abs=1e-5)
    xs, us = steady_state_from_output(lp.plant, [sol.rs])
    np.testing.assert_allclose(sol.xs, xs, atol=1e-5)
    assert lp.constraints.X.contains(sol.x_pred.T[:, :].T).all()


def test_large_offset_weight_tracks_reachable_reference(numerical):
    ctl, _ = make(numerical, D=1e6)
    for r in (0.4, 0.9, 1.1):
        assert ctl.solve_qp(XS1, r).rs == pytest.approx(r, abs=2e-3)


def test_solution_respects_constraints(numerical, rng):
    ctl, lp = make(numerical)
    est = Estimator(lp.plant, lp.constraints, lp.spec, lp.V, lp.theta0, samples=300, seed=2).estimate
    for _ in range(5):
        x0 = rng.uniform([-20, -2], [20, 2])
        sol = ctl.solve(x0, est)
        if not sol.feasible:
            continue
        assert np.all(np.abs(sol.u_seq) <= 5 + 1e-7)
        assert np.all(np.abs(sol.x_pred) <= 25 + 1e-6)
        assert ctl.design.alpha_min - 1e-9 <= sol.alpha <= 1 + 1e-9
        # terminal row
        Hf, hf = ctl.design.Xf.H, ctl.design.Xf.h
        assert np.all(Hf @ (sol.x_pred[-1] - sol.xs) <= sol.alpha * hf + 1e-6)


def test_trace_constant_arithmetic(numerical):
    ctl, lp = make(numerical)
    est = degenerate_estimate(lp.plant, lp.constraints, lp.spec, [-1.0, 2.0])
    est.P_x = np.eye(2)
    est.P_u = np.zeros((1, 1))
    assert trace_constant(est, np.eye(2), np.zeros((1, 1)), np.eye(2), 10) == pytest.approx(22.0)
    est.P_x = np.zeros((2, 2))
    assert trace_constant(est, np.eye(2), np.eye(1), np.eye(2), 10) == 0.0


def test_stochastic_cost_mean_decomposition(numerical, rng):
    ctl, lp = make(numerical)
    est = Estimator(lp.plant, lp.constraints, lp.spec, lp.V, lp.theta0, samples=4000, seed=5).estimate
    x0 = np.array([3.0, -0.5])
    sol = ctl.solve_qp(x0, est.r_bar)
    Mx, Mu = lp.plant.Mx[:, 0], lp.plant.Mu[:, 0]
    xs = np.outer(est.r_samples, Mx)
    us = np.outer(est.r_samples, Mu)
    c = stochastic_cost(sol.u_seq, x0, lp.plant, xs, us, ctl.Q, ctl.R, ctl.S)
    det = ctl.tracking_cost(sol.x_pred, sol.u_seq, est.xs_bar, est.us_bar)
    pred = det + trace_constant(est, ctl.Q, ctl.R, ctl.S, ctl.cfg.N)
    assert c.mean() == pytest.approx(pred, rel=1e-9)


def test_strict_mode_raises(numerical):
    ctl, lp = make(numerical, strict=True)
    est = degenerate_estimate(lp.plant, lp.constraints, lp.spec, [-1.0, 2.0])
    with pytest.raises(Infeasible):
        ctl.solve(np.array([24.9, 24.9]), est)


def test_non_strict_infeasible_degrades(numerical):
    ctl, lp = make(numerical)
    est = degenerate_estimate(lp.plant, lp.constraints, lp.spec, [-1.0, 2.0])
    sol = ctl.solve(np.array([24.9, 24.9]), est)
    assert not sol.feasible and sol.fallback
    assert np.all(np.abs(sol.u_seq) <= 5.0)
    assert ctl.infeasible_count == 1
