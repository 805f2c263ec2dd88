"""Active-learning MPC: exploration-aware refinement of the EO plan.

A candidate input sequence is scored by rolling it forward, cutting the
current parameter samples with noise-free virtual measurements, and solving a
small convex QP for the per-stage artificial reference chain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eo_mpc import BIG, ControllerConfig, ControlSolution, EOController, prediction_matrices, rollout
from .errors import Infeasible, MaxIterations
from .estimator import ParamEstimate
from .numerics import QPWorkspace
from .polytope import HPolytope, intersect
from .estimator import nonfalsified_set


@dataclass
class PredictedSetChain:
    sets: list  # HPolytope per stage, stage 0 is the current set
    z_bar: np.ndarray  # virtual measurements at stages 1..N
    y: np.ndarray  # predicted outputs y_0..y_N
    r_bar: np.ndarray  # per-stage means, stages 0..N
    P_r: np.ndarray
    counts: np.ndarray  # surviving samples per stage
    mx: np.ndarray
    mu: np.ndarray

    def P_x(self, i: int) -> np.ndarray:
        return np.outer(self.mx, self.mx) * self.P_r[i]

    def P_u(self, i: int) -> np.ndarray:
        return np.outer(self.mu, self.mu) * self.P_r[i]

    @property
    def xs_bar(self) -> np.ndarray:
        return self.r_bar[:, None] * self.mx[None, :]


def _stage_moments(r_samples, masks, r0, P0, min_samples):
    """Per-stage mean/variance over surviving samples, clamped when too few survive."""
    Mf = masks.astype(float)
    cnt = Mf.sum(axis=1)
    s1 = Mf @ r_samples
    s2 = Mf @ (r_samples * r_samples)
    n_st = masks.shape[0]
    r_bar = np.empty(n_st + 1)
    P_r = np.empty(n_st + 1)
    counts = np.empty(n_st + 1, dtype=int)
    r_bar[0], P_r[0], counts[0] = r0, P0, len(r_samples)
    for i in range(n_st):
        c = cnt[i]
        counts[i + 1] = int(c)
        if c >= min_samples:
            m = s1[i] / c
            r_bar[i + 1] = m
            P_r[i + 1] = max(s2[i] / c - m * m, 0.0)
        else:
            r_bar[i + 1], P_r[i + 1] = r_bar[i], P_r[i]
    return r_bar, P_r, counts


def stage_masks(spec, V: HPolytope, samples, theta_bar, ys):
    """Cumulative membership of ``samples`` in the virtual slabs at outputs ``ys``."""
    F = spec.phi(np.asarray(ys, float)[:, None])  # (n_st, p)
    # z_bar - g - phi' theta = phi' (theta_bar - theta) must lie in V
    resid = F @ (theta_bar[:, None] - samples.T)  # (n_st, M)
    ok = np.ones(resid.shape, dtype=bool)
    for hv, bv in zip(V.H[:, 0], V.h):
        ok &= hv * resid <= bv + 1e-12
    return np.logical_and.accumulate(ok, axis=0)


def predict_sets(u_seq, x0, estimate: ParamEstimate, plant, spec, V: HPolytope,
                 min_samples: int = 50, build_sets: bool = True) -> PredictedSetChain:
    """Predicted parameter sets and per-stage moments under ``u_seq``."""
    traj = rollout(plant, x0, u_seq)
    ys = np.array([float(plant.output(x)[0]) for x in traj])
    masks = stage_masks(spec, V, estimate.samples, estimate.theta_bar, ys[1:])
    r_bar, P_r, counts = _stage_moments(estimate.r_samples, masks, estimate.r_bar,
                                        estimate.P_r, min_samples)
    z_bar = np.array([spec.model(y, estimate.theta_bar) for y in ys[1:]])
    sets = [estimate.theta_set]
    if build_sets:
        cur = estimate.theta_set
        for y, z in zip(ys[1:], z_bar):
            cur = intersect(cur, nonfalsified_set(spec, V, y, z))
            sets.append(cur)
    return PredictedSetChain(sets, z_bar, ys, r_bar, P_r, counts,
                             plant.Mx[:, 0].copy(), plant.Mu[:, 0].copy())


def exploration_cost(chain: PredictedSetChain, Q, R, S, N: int | None = None) -> float:
    """``sum_{i<N} tr(Q Px_i + R Pu_i) + tr(S Px_N)``."""
    N = len(chain.P_r) - 1 if N is None else N
    qx = float(chain.mx @ Q @ chain.mx)
    ru = float(chain.mu @ R @ chain.mu)
    sx = float(chain.mx @ S @ chain.mx)
    P = np.asarray(chain.P_r)
    return float((qx + ru) * P[:N].sum() + sx * P[N])


class ALController(EOController):
    """EO warm start followed by a pattern search on the exploration-aware score."""

    name = "al"

    def __init__(self, plant, constraints, design, spec, V: HPolytope,
                 config: ControllerConfig | None = None, numerics=None):
        kw = {} if numerics is None else {"numerics": numerics}
        super().__init__(plant, constraints, design, spec, config, **kw)
        self.V = V
        self._build_chain_qp()

    # -- inner QP over the reference chain ------------------------------------
    def _build_chain_qp(self):
        p, N = self.plant, self.cfg.N
        nx, nu = p.nx, p.nu
        PhiS, GamS = prediction_matrices(p, N)  # xs_i = PhiS[i] xs0 + GamS[i] us_{0..N-1}
        n = nx + (N + 1) * nu + 1
        self.c_n = n
        ix0 = slice(0, nx)
        ius = [slice(nx + i * nu, nx + (i + 1) * nu) for i in range(N + 1)]
        ia = n - 1
        self.c_ia, self.c_ius, self.c_ix0 = ia, ius, ix0

        def xs_map(i):
            L = np.zeros((nx, n))
            L[:, ix0] = PhiS[i]
            L[:, nx:nx + N * nu] = GamS[i]
            return L

        self.c_xs = [xs_map(i) for i in range(N + 1)]
        self.c_us = []
        for i in range(N + 1):
            L = np.zeros((nu, n))
            L[:, ius[i]] = np.eye(nu)
            self.c_us.append(L)
        # cost 0.5 w'Pw + q'w with q = sum_i Lx_i' W (-x_i) ... assembled per call
        P = np.zeros((n, n))
        for i in range(N + 1):
            W = self.S if i == N else self.Q
            P += 2 * self.c_xs[i].T @ W @ self.c_xs[i]
        for i in range(N):
            P += 2 * self.c_us[i].T @ self.R @ self.c_us[i]
        for i in range(1, N + 1):
            Lr = p.C @ self.c_xs[i]
            P += 2 * Lr.T @ self.D @ Lr
        self.c_P = 0.5 * (P + P.T)
        # q = Tq @ [traj; U; r] and const = quadratic form of the same stack
        nt = (N + 1) * nx
        ns = nt + N * nu + (N + 1) * p.ny
        Tq = np.zeros((n, ns))
        Wd = np.zeros((ns, ns))
        for i in range(N + 1):
            W = self.S if i == N else self.Q
            Tq[:, i * nx:(i + 1) * nx] = -2 * self.c_xs[i].T @ W
            Wd[i * nx:(i + 1) * nx, i * nx:(i + 1) * nx] = W
        for i in range(N):
            c0 = nt + i * nu
            Tq[:, c0:c0 + nu] = -2 * self.c_us[i].T @ self.R
            Wd[c0:c0 + nu, c0:c0 + nu] = self.R
        ny = p.ny
        for i in range(1, N + 1):
            c0 = nt + N * nu + i * ny
            Tq[:, c0:c0 + ny] = -2 * (p.C @ self.c_xs[i]).T @ self.D
            Wd[c0:c0 + ny, c0:c0 + ny] = self.D
        self.c_Tq, self.c_Wd = Tq, Wd
        self.c_R = np.vstack([p.C @ self.c_xs[i] for i in range(1, N + 1)])
        rows, lo, hi = [], [], []
        E = (p.A - np.eye(nx)) @ self.c_xs[N] + p.B @ self.c_us[N]
        rows.append(E)
        lo.append(np.zeros(nx))
        hi.append(np.zeros(nx))
        HX, hX = self.constraints.X.H, self.constraints.X.h
        HU, hU = self.constraints.U.H, self.constraints.U.h
        for i in range(N):  # stage N is covered by the alpha rows
            rows.append(HX @ self.c_xs[i])
            lo.append(np.full(len(hX), -BIG))
            hi.append(hX)
        for i in range(N + 1):
            rows.append(HU @ self.c_us[i])
            lo.append(np.full(len(hU), -BIG))
            hi.append(hU)
        Hf, hf = self.design.Xf.H, self.design.Xf.h
        Rf = -Hf @ self.c_xs[N]
        Rf[:, ia] -= hf
        rows.append(Rf)  # -Hf xs_N - alpha hf <= -Hf x_N
        lo.append(np.full(len(hf), -BIG))
        hi.append(np.zeros(len(hf)))
        self.c_tf = slice(sum(r.shape[0] for r in rows[:-1]), sum(r.shape[0] for r in rows))
        from .terminal import admissible_alpha_rows
        G, g = admissible_alpha_rows(self.design, self.constraints, self.numerics)
        Ra = G[:, :nx] @ self.c_xs[N]
        Ra[:, ia] += G[:, nx]
        rows.append(Ra)
        lo.append(np.full(len(g), -BIG))
        hi.append(g)
        Rb = np.zeros((1, n))
        Rb[0, ia] = 1.0
        rows.append(Rb)
        lo.append([self.design.alpha_min])
        hi.append([1.0])
        self.c_A = np.vstack(rows)
        self.c_l = np.concatenate([np.asarray(v, float) for v in lo])
        self.c_u = np.concatenate([np.asarray(v, float) for v in hi])
        self.c_ws = QPWorkspace(self.c_P, self.c_A, self.numerics)
        self.c_Hf = Hf

    def chain_qp(self, traj, u_seq, r_bars):
        """Best reference chain for a fixed input plan; returns ``(w, J_ET, J_off)``."""
        N = self.cfg.N
        stack = np.concatenate([np.ravel(traj), np.ravel(u_seq), np.ravel(r_bars)])
        q = self.c_Tq @ stack
        const = float(stack @ self.c_Wd @ stack)
        u = self.c_u.copy()
        u[self.c_tf] = -self.c_Hf @ traj[N]
        res = self.c_ws.solve(q, self.c_l, u)
        w = res.x
        d = self.c_R @ w - np.ravel(r_bars)[1:]
        J_off = float(self.D[0, 0] * d @ d) if self.plant.ny == 1 else float(
            sum(di @ self.D @ di for di in d.reshape(N, -1)))
        return w, res.value + const - J_off, J_off

    # -- scoring -------------------------------------------------------------
    def _state_ok(self, traj) -> bool:
        X = self.constraints.X
        return bool(np.all(traj[1:] @ X.H.T <= X.h + 1e-9))

    def score(self, u_seq, x0, estimate: ParamEstimate):
        """``(score, details)`` or ``(inf, None)`` for a rejected candidate."""
        u_seq = np.clip(np.asarray(u_seq, float), self.u_lo[0], self.u_hi[0])
        traj = rollout(self.plant, x0, u_seq)
        if not self._state_ok(traj):
            return np.inf, None
        ys = traj @ self.plant.C[0]
        masks = stage_masks(self.spec, self.V, estimate.samples, estimate.theta_bar, ys[1:])
        r_bar, P_r, counts = _stage_moments(estimate.r_samples, masks, estimate.r_bar,
                                            estimate.P_r, self.cfg.al_min_samples)
        try:
            w, J_ET, J_off = self.chain_qp(traj, u_seq, r_bar)
        except (Infeasible, MaxIterations):
            return np.inf, None
        chain = PredictedSetChain([], np.empty(0), ys, r_bar, P_r, counts,
                                  self.plant.Mx[:, 0], self.plant.Mu[:, 0])
        J_ER = exploration_cost(chain, self.Q, self.R, self.S, self.cfg.N)
        s = J_ET + self.cfg.explore_weight * J_ER + J_off
        return s, dict(u=u_seq, traj=traj, w=w, J_ET=J_ET, J_ER=J_ER, J_off=J_off,
                       r_bar=r_bar, P_r=P_r, counts=counts)

    def pattern_search(self, u0, x0, estimate):
        N = self.cfg.N
        span = float(self.u_hi[0] - self.u_lo[0])
        step = self.cfg.al_step if self.cfg.al_step is not None else 0.25 * span
        tol = self.cfg.al_tol * span
        best_s, best = self.score(u0, x0, estimate)
        evals = 1
        if best is None:
            return None, None, evals
        u = best["u"].copy()
        while evals < self.cfg.al_budget and step >= tol:
            improved = False
            for j in range(N):
                for sgn in (1.0, -1.0):
                    if evals >= self.cfg.al_budget:
                        break
                    cand = u.copy()
                    cand[j] = np.clip(cand[j] + sgn * step, self.u_lo[0], self.u_hi[0])
                    if cand[j] == u[j]:
                        continue
                    s, det = self.score(cand, x0, estimate)
                    evals += 1
                    if s < best_s - 1e-12 * max(1.0, abs(best_s)):
                        best_s, best, u = s, det, det["u"].copy()
                        improved = True
                        break
            if not improved:
                step *= 0.5
        return best_s, best, evals

    def solve(self, x0, estimate: ParamEstimate, prev: ControlSolution | None = None) -> ControlSolution:
        try:
            eo = self.solve_qp(x0, estimate.r_bar)
        except (Infeasible, MaxIterations) as exc:
            return self.infeasible_solution(x0, estimate, prev, exc)
        if self.cfg.explore_weight == 0.0:
            eo.score = eo.J_ET + eo.J_offset
            return self.finalize(eo, x0, estimate, prev)
        s0, det0 = self.score(eo.u_seq, x0, estimate)
        best_s, best, evals = self.pattern_search(eo.u_seq, x0, estimate)
        if best is None:
            # warm start not representable in the chain problem: keep EO
            eo.score = eo.J_ET + eo.J_offset
            eo.evaluations = evals
            return self.finalize(eo, x0, estimate, prev)
        N = self.cfg.N
        w = best["w"]
        xsN = self.c_xs[N] @ w
        usN = self.c_us[N] @ w
        sol = ControlSolution(u_seq=best["u"], alpha=float(w[self.c_ia]),
                              rs=float(self.plant.C[0] @ xsN), xs=xsN, us=usN,
                              x_pred=best["traj"], J_ET=best["J_ET"], J_offset=best["J_off"],
                              J_ER=best["J_ER"], evaluations=evals, score=best_s)
        sol.extra.update(warm_score=s0, r_chain=best["r_bar"], P_chain=best["P_r"],
                         recenter=float(np.linalg.norm(xsN - estimate.xs_bar)))
        return self.finalize(sol, x0, estimate, prev)
