"""Exploitation-oriented MPC: one convex QP per step with an artificial reference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import Infeasible, MaxIterations
from .estimator import ParamEstimate
from .excitation import (VirtualSignalSpec, fallback_sequence, pe_check,
                         terminal_sequence)
from .numerics import DEFAULT, NumericsConfig, QPWorkspace
from .plant import ConstraintSets, LiftedPlant
from .polytope import bounding_box
from .terminal import TerminalDesign, admissible_alpha_rows

BIG = kernels.BIG


@dataclass
class ControllerConfig:
    N: int = 10
    N_u: int | None = None
    Q: object = None  # defaults to identity
    R: object = None
    S: object = None  # defaults to the Lyapunov weight of the terminal design
    D: object = 100.0
    M: int = 2000
    s_max: float = 0.1
    seed: int = 0
    strict: bool = False
    pe_law: str = "gaussian"
    al_budget: int = 200
    al_min_samples: int = 50
    al_step: float | None = None  # initial poll step; defaults to 25% of the input range
    al_tol: float = 1e-3  # poll step below which the search stops, relative to the range
    explore_weight: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("horizon N must be at least 2")
        if self.N_u is None:
            self.N_u = self.N + 5
        if self.N_u <= self.N:
            raise ValueError("PE window N_u must exceed N")
        if self.M < 1:
            raise ValueError("sample count M must be positive")
        if not self.s_max > 0:
            raise ValueError("s_max must be positive")

    def weights(self, nx: int, nu: int, ny: int):
        def mat(v, n, default):
            if v is None:
                return default * np.eye(n)
            M = np.atleast_2d(np.asarray(v, float))
            if M.size == 1:
                M = M[0, 0] * np.eye(n)
            if M.shape != (n, n):
                raise ValueError(f"weight of shape {M.shape} does not match dimension {n}")
            return M
        Q, R, D = mat(self.Q, nx, 1.0), mat(self.R, nu, 1.0), mat(self.D, ny, 100.0)
        for name, M, strict in (("Q", Q, False), ("R", R, True), ("D", D, True)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            ev = np.linalg.eigvalsh(M).min()
            if ev < 0 or (strict and ev <= 0):
                raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
        return Q, R, D


@dataclass
class ControlSolution:
    u_seq: np.ndarray
    alpha: float
    rs: float
    xs: np.ndarray
    us: np.ndarray
    x_pred: np.ndarray
    J_ET: float
    J_offset: float
    J_ER: float = 0.0
    trace_const: float = 0.0
    feasible: bool = True
    fallback: bool = False
    beta: float = float("nan")
    evaluations: int = 0
    score: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def u0(self) -> float:
        return float(np.atleast_1d(self.u_seq[0])[0])


def trace_constant(estimate: ParamEstimate, Q, R, S, N: int) -> float:
    """Expected-cost surplus of the stochastic cost over its deterministic part.

    Stages run over ``i = 0..N-1``, so there are ``N`` stage traces.
    """
    Px, Pu = estimate.P_x, estimate.P_u
    return float(N * (np.trace(Q @ Px) + np.trace(R @ Pu)) + np.trace(S @ Px))


def stochastic_cost(u_seq, x0, plant: LiftedPlant, xs_samples, us_samples, Q, R, S):
    """Per-sample cost with the steady pair drawn from the parameter set."""
    xs_traj = rollout(plant, x0, u_seq)
    U = np.asarray(u_seq, float).reshape(len(u_seq), -1)
    out = np.zeros(len(xs_samples))
    for i in range(len(U)):
        dx = xs_traj[i][None, :] - xs_samples
        du = U[i][None, :] - us_samples
        out += np.einsum("ij,jk,ik->i", dx, Q, dx) + np.einsum("ij,jk,ik->i", du, R, du)
    dx = xs_traj[-1][None, :] - xs_samples
    out += np.einsum("ij,jk,ik->i", dx, S, dx)
    return out


def rollout(plant: LiftedPlant, x0, u_seq) -> np.ndarray:
    x = np.asarray(x0, float)
    out = [x]
    for u in np.asarray(u_seq, float).reshape(len(u_seq), -1):
        x = plant.step(x, u)
        out.append(x)
    return np.array(out)


def prediction_matrices(plant: LiftedPlant, N: int):
    """``x_i = Phi[i] x0 + Gamma[i] u`` for ``i = 0..N``."""
    nx, nu = plant.nx, plant.nu
    Phi = np.zeros((N + 1, nx, nx))
    Gam = np.zeros((N + 1, nx, N * nu))
    Phi[0] = np.eye(nx)
    for i in range(1, N + 1):
        Phi[i] = plant.A @ Phi[i - 1]
        Gam[i] = plant.A @ Gam[i - 1]
        Gam[i][:, (i - 1) * nu:i * nu] = plant.B
    return Phi, Gam


class EOController:
    """Receding-horizon controller solving one QP per step."""

    name = "eo"

    def __init__(self, plant: LiftedPlant, constraints: ConstraintSets, design: TerminalDesign,
                 spec, config: ControllerConfig | None = None,
                 numerics: NumericsConfig = DEFAULT):
        self.plant, self.constraints, self.design, self.spec = plant, constraints, design, spec
        self.cfg = config or ControllerConfig()
        self.numerics = numerics
        nx, nu, ny, N = plant.nx, plant.nu, plant.ny, self.cfg.N
        self.Q, self.R, self.D = self.cfg.weights(nx, nu, ny)
        self.S = design.S if self.cfg.S is None else np.atleast_2d(np.asarray(self.cfg.S, float))
        self.signal: VirtualSignalSpec = design.signal
        self.rng = np.random.default_rng([self.cfg.seed, 7])
        self.u_lo, self.u_hi = bounding_box(constraints.U, numerics)
        self.Phi, self.Gam = prediction_matrices(plant, N)
        self._build()
        self.infeasible_count = 0

    # -- layout --------------------------------------------------------------
    def _build(self):
        p, N = self.plant, self.cfg.N
        nx, nu, ny = p.nx, p.nu, p.ny
        self.iu = slice(0, N * nu)
        self.ixs = slice(N * nu, N * nu + nx)
        self.ius = slice(self.ixs.stop, self.ixs.stop + nu)
        self.irs = slice(self.ius.stop, self.ius.stop + ny)
        self.ia = self.irs.stop
        n = self.ia + 1
        self.n = n

        def sel(sl, width):
            M = np.zeros((width, n))
            M[:, sl] = np.eye(width)
            return M

        Sxs, Sus, Srs = sel(self.ixs, nx), sel(self.ius, nu), sel(self.irs, ny)
        P = np.zeros((n, n))
        Gx = np.zeros((n, nx))  # q = Gx x0 + Gr rbar
        Gr = np.zeros((n, ny))
        for i in range(N + 1):
            L = np.zeros((nx, n))
            L[:, self.iu] = self.Gam[i]
            L -= Sxs
            W = self.S if i == N else self.Q
            P += 2 * L.T @ W @ L
            Gx += 2 * L.T @ W @ self.Phi[i]
        for i in range(N):
            L = -Sus.copy()
            L[:, i * nu:(i + 1) * nu] += np.eye(nu)
            P += 2 * L.T @ self.R @ L
        P += 2 * Srs.T @ self.D @ Srs
        Gr -= 2 * Srs.T @ self.D
        self.P = 0.5 * (P + P.T)
        self.Gx, self.Gr = Gx, Gr

        rows, lo, hi, x0map = [], [], [], []  # bound = const + x0map @ x0 (upper side)

        def add(R, l, u, X0=None):
            rows.append(R)
            lo.append(np.asarray(l, float))
            hi.append(np.asarray(u, float))
            x0map.append(np.zeros((R.shape[0], nx)) if X0 is None else X0)

        E1 = np.zeros((nx, n))
        E1[:, self.ixs] = p.A - np.eye(nx)
        E1[:, self.ius] = p.B
        add(E1, np.zeros(nx), np.zeros(nx))
        E2 = np.zeros((ny, n))
        E2[:, self.ixs] = p.C
        E2[:, self.irs] = -np.eye(ny)
        add(E2, np.zeros(ny), np.zeros(ny))
        self.n_eq = nx + ny
        HX, hX = self.constraints.X.H, self.constraints.X.h
        HU, hU = self.constraints.U.H, self.constraints.U.h
        for i in range(1, N + 1):
            R = np.zeros((len(hX), n))
            R[:, self.iu] = HX @ self.Gam[i]
            add(R, np.full(len(hX), -BIG), hX, -HX @ self.Phi[i])
        for i in range(N):
            R = np.zeros((len(hU), n))
            R[:, i * nu:(i + 1) * nu] = HU
            add(R, np.full(len(hU), -BIG), hU)
        R = np.zeros((len(hU), n))
        R[:, self.ius] = HU
        add(R, np.full(len(hU), -BIG), hU)
        Hf, hf = self.design.Xf.H, self.design.Xf.h
        R = np.zeros((len(hf), n))
        R[:, self.iu] = Hf @ self.Gam[N]
        R[:, self.ixs] = -Hf
        R[:, self.ia] = -hf
        add(R, np.full(len(hf), -BIG), np.zeros(len(hf)), -Hf @ self.Phi[N])
        G, g = admissible_alpha_rows(self.design, self.constraints, self.numerics)
        R = np.zeros((len(g), n))
        R[:, self.ixs] = G[:, :nx]
        R[:, self.ia] = G[:, nx]
        add(R, np.full(len(g), -BIG), g)
        R = np.zeros((1, n))
        R[0, self.ia] = 1.0
        add(R, [self.design.alpha_min], [1.0])
        self.A = np.vstack(rows)
        self.l0 = np.concatenate(lo)
        self.u0_ = np.concatenate(hi)
        self.Ux0 = np.vstack(x0map)
        self.ws = QPWorkspace(self.P, self.A, self.numerics)

    # -- solve ---------------------------------------------------------------
    def qp_data(self, x0, r_bar):
        x0 = np.asarray(x0, float)
        q = self.Gx @ x0 + self.Gr @ np.atleast_1d(r_bar)
        u = self.u0_ + self.Ux0 @ x0
        return q, self.l0, u

    def unpack(self, z, x0, r_bar) -> ControlSolution:
        N, nu = self.cfg.N, self.plant.nu
        u_seq = z[self.iu].reshape(N, nu)
        u_seq = u_seq[:, 0] if nu == 1 else u_seq
        xs, us = z[self.ixs], z[self.ius]
        rs = float(z[self.irs][0])
        traj = rollout(self.plant, x0, u_seq)
        J_ET = self.tracking_cost(traj, u_seq, xs, us)
        d = rs - float(np.atleast_1d(r_bar)[0])
        J_off = float(self.D[0, 0] * d * d)
        return ControlSolution(u_seq=np.asarray(u_seq, float), alpha=float(z[self.ia]), rs=rs,
                               xs=xs.copy(), us=us.copy(), x_pred=traj, J_ET=J_ET, J_offset=J_off)

    def tracking_cost(self, traj, u_seq, xs, us) -> float:
        U = np.asarray(u_seq, float).reshape(self.cfg.N, -1)
        J = 0.0
        for i in range(self.cfg.N):
            dx = traj[i] - xs
            du = U[i] - us
            J += dx @ self.Q @ dx + du @ self.R @ du
        dx = traj[-1] - xs
        return float(J + dx @ self.S @ dx)

    def solve_qp(self, x0, r_bar) -> ControlSolution:
        q, l, u = self.qp_data(x0, r_bar)
        res = self.ws.solve(q, l, u)
        return self.unpack(res.x, x0, r_bar)

    def _fallback(self, x0, estimate: ParamEstimate, prev: ControlSolution | None):
        if prev is None:
            return terminal_sequence(x0, self.plant, self.design.K, estimate.xs_bar, estimate.us_bar,
                                     self.signal, (self.u_lo, self.u_hi), self.rng, self.cfg.N)
        return fallback_sequence(prev.u_seq, x0, self.plant, self.design.K, estimate.xs_bar,
                                 estimate.us_bar, self.signal, (self.u_lo, self.u_hi), self.rng)

    def finalize(self, sol: ControlSolution, x0, estimate: ParamEstimate,
                 prev: ControlSolution | None) -> ControlSolution:
        """Run the PE check and substitute the fallback plan when it fails."""
        fb = self._fallback(x0, estimate, prev)
        chosen, report = pe_check(sol.u_seq, fb, x0, self.plant, self.spec, self.signal,
                                  self.design.K, sol.xs, sol.us, self.cfg.N_u, self.cfg.pe_law)
        sol.beta = report.betas[0]
        sol.extra["pe"] = report
        if report.fallback_used:
            sol.u_seq = chosen
            sol.x_pred = rollout(self.plant, x0, chosen)
            sol.fallback = True
        sol.trace_const = trace_constant(estimate, self.Q, self.R, self.S, self.cfg.N)
        return sol

    def infeasible_solution(self, x0, estimate, prev, exc) -> ControlSolution:
        self.infeasible_count += 1
        if self.cfg.strict:
            raise Infeasible(f"controller QP infeasible: {exc}") from exc
        fb = self._fallback(x0, estimate, prev)
        ref = prev if prev is not None else None
        xs = ref.xs if ref is not None else estimate.xs_bar
        us = ref.us if ref is not None else estimate.us_bar
        return ControlSolution(u_seq=np.asarray(fb, float), alpha=ref.alpha if ref else 1.0,
                               rs=ref.rs if ref else estimate.r_bar, xs=xs, us=us,
                               x_pred=rollout(self.plant, x0, fb), J_ET=float("nan"),
                               J_offset=float("nan"), feasible=False, fallback=True)

    def solve(self, x0, estimate: ParamEstimate, prev: ControlSolution | None = None) -> ControlSolution:
        try:
            sol = self.solve_qp(x0, estimate.r_bar)
        except (Infeasible, MaxIterations) as exc:
            return self.infeasible_solution(x0, estimate, prev, exc)
        sol.score = sol.J_ET + sol.J_offset
        return self.finalize(sol, x0, estimate, prev)

    def apply(self, sol: ControlSolution) -> np.ndarray:
        u = np.atleast_1d(np.asarray(sol.u_seq, float).reshape(self.cfg.N, -1)[0])
        return np.clip(u, self.u_lo, self.u_hi)
