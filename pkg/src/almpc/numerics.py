"""Dense linear algebra and small convex programs.

Every tolerance lives in :class:`NumericsConfig`.  The QP core is an
ADMM loop (see :mod:`almpc.kernels`) followed by an active-set polish that
solves the KKT system on the identified active set and repairs it until the
KKT conditions hold.  LPs are delegated to HiGHS through scipy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .errors import (DimensionMismatch, Infeasible, MaxIterations,
                     NotStabilizable, Unbounded, UnstableMatrix)


@dataclass(frozen=True)
class NumericsConfig:
    tol_feas: float = 1e-8
    tol_kkt: float = 1e-6
    tol_lyap: float = 1e-8
    tol_riccati: float = 1e-10
    riccati_max_iter: int = 200_000
    unstable_margin: float = 1e-9
    # ADMM
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_inf: float = 1e-6
    admm_max_iter: int = 4000
    check_every: int = 10
    ruiz_iter: int = 10
    polish_max_iter: int = 60
    polish_reg: float = 1e-11


DEFAULT = NumericsConfig()


@dataclass
class LPResult:
    x: np.ndarray
    value: float


@dataclass
class QPResult:
    x: np.ndarray
    value: float
    y: np.ndarray  # multipliers for the stacked rows (eq first, then ineq)
    active: np.ndarray = field(repr=False)  # -1 lower, +1 upper, 0 inactive
    iterations: int = 0
    polished: bool = True


def _as2d(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def solve_lp(c, H, h, A_eq=None, b_eq=None, config: NumericsConfig = DEFAULT) -> LPResult:
    """Minimize ``c @ x`` subject to ``H x <= h`` (and optional equalities)."""
    c = np.asarray(c, dtype=float).ravel()
    H = np.asarray(H, dtype=float).reshape(-1, c.size)
    h = np.asarray(h, dtype=float).ravel()
    if H.shape[0] != h.size:
        raise DimensionMismatch(f"H has {H.shape[0]} rows, h has {h.size}")
    kw = {}
    if A_eq is not None:
        kw["A_eq"] = np.asarray(A_eq, dtype=float).reshape(-1, c.size)
        kw["b_eq"] = np.asarray(b_eq, dtype=float).ravel()
    res = linprog(c, A_ub=H if H.size else None, b_ub=h if H.size else None,
                  bounds=[(None, None)] * c.size, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10}, **kw)
    if res.status == 2:
        raise Infeasible("LP constraints are inconsistent")
    if res.status == 3:
        raise Unbounded("LP objective is unbounded below")
    if res.status != 0:
        raise MaxIterations(f"HiGHS failed: {res.message}")
    x = res.x
    if H.size:
        scale = np.maximum(np.maximum(1.0, np.abs(h)), np.abs(H).sum(axis=1) * np.max(np.abs(x)))
        # HiGHS applies its tolerance after internal scaling; this is a sanity net
        if np.max((H @ x - h) / scale) > 100.0 * config.tol_feas:
            raise MaxIterations("LP solution violates constraints beyond tolerance")
    return LPResult(x=x, value=float(c @ x))


# ---------------------------------------------------------------------------
# QP


def _ruiz(P, A, iters):
    n = P.shape[0]
    m = A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col = np.max(np.abs(Ps), axis=0)
        if m:
            col = np.maximum(col, np.max(np.abs(As), axis=0))
        col = np.where(col < 1e-4, 1.0, col)
        d = 1.0 / np.sqrt(col)
        if m:
            row = np.max(np.abs(As), axis=1)
            row = np.where(row < 1e-4, 1.0, row)
            e = 1.0 / np.sqrt(row)
        else:
            e = np.ones(0)
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        D *= d
        E *= e
    return D, E, Ps, As


class QPWorkspace:
    """Factorized data for repeated solves sharing ``P`` and ``A``.

    Solves ``min 0.5 x'Px + q'x  s.t.  l <= A x <= u``.  Only ``q``, ``l``,
    ``u`` change between calls, which is the situation in the receding-horizon
    loops and in the inner problems of the active-learning search.
    """

    def __init__(self, P, A, config: NumericsConfig = DEFAULT):
        self.config = config
        self.P = _as2d(P, "P")
        n = self.P.shape[0]
        if self.P.shape != (n, n):
            raise DimensionMismatch("P must be square")
        A = np.asarray(A, dtype=float)
        self.A = A.reshape(-1, n) if A.size else np.zeros((0, n))
        self.n = n
        self.m = self.A.shape[0]
        self.D, self.E, self.Ps, self.As = _ruiz(self.P, self.A, config.ruiz_iter)
        self._kinv = None
        self._rho_key = None
        self.last_active = None

    # -- helpers -----------------------------------------------------------
    def _factor(self, rho_vec):
        key = (rho_vec.tobytes(), self._c)
        if key != self._rho_key:
            K = self.Ps * self._c + self.config.sigma * np.eye(self.n)
            if self.m:
                K = K + self.As.T @ (rho_vec[:, None] * self.As)
            self._kinv = np.ascontiguousarray(np.linalg.inv(K))
            self._rho_key = key
        return self._kinv

    def _kkt_solve(self, q, act_rows, rhs_b):
        """Solve the KKT system on the given rows with iterative refinement."""
        n = self.n
        Aa = self.A[act_rows]
        k = Aa.shape[0]
        reg = self.config.polish_reg * max(1.0, float(np.max(np.abs(self.P))) if self.P.size else 1.0)
        Kexact = np.zeros((n + k, n + k))
        Kexact[:n, :n] = self.P
        Kexact[:n, n:] = Aa.T
        Kexact[n:, :n] = Aa
        Kreg = Kexact.copy()
        Kreg[:n, :n] += reg * np.eye(n)
        Kreg[n:, n:] -= reg * np.eye(k)
        rhs = np.concatenate([-q, rhs_b])
        try:
            lu = np.linalg.inv(Kreg)
        except np.linalg.LinAlgError:
            return None, None
        sol = lu @ rhs
        for _ in range(5):
            r = rhs - Kexact @ sol
            sol = sol + lu @ r
        if not np.all(np.isfinite(sol)):
            return None, None
        def resid(s):
            r = np.abs(rhs - Kexact @ s)
            # constraint rows and stationarity rows live on different scales
            return max(float(np.max(r[n:], initial=0.0)) / max(1.0, float(np.max(np.abs(rhs_b), initial=0.0))),
                       float(np.max(r[:n])) / max(1.0, float(np.max(np.abs(q)))))

        res = resid(sol)
        if res > 1e-12:
            # singular or badly scaled KKT: least-squares is consistent when the rows are
            alt = np.linalg.lstsq(Kexact, rhs, rcond=None)[0]
            if np.all(np.isfinite(alt)) and resid(alt) < res:
                sol = alt
        return sol[:n], sol[n:]

    def _active_set_refine(self, q, l, u, active):
        """Primal-dual active-set repair.  Returns (x, y, active) or None."""
        cfg = self.config
        A = self.A
        eq = l >= u - 1e-14 * np.maximum(1.0, np.abs(u))
        active = active.copy()
        active[eq] = 1
        scale_b = 1.0 + max(float(np.max(np.abs(np.where(np.abs(l) < kernels.BIG, l, 0.0)), initial=0.0)),
                            float(np.max(np.abs(np.where(np.abs(u) < kernels.BIG, u, 0.0)), initial=0.0)))
        ptol = cfg.tol_feas * scale_b
        seen = set()
        for _ in range(cfg.polish_max_iter):
            key = active.tobytes()
            if key in seen:
                return None
            seen.add(key)
            rows = np.flatnonzero(active)
            b = np.where(active[rows] > 0, u[rows], l[rows])
            x, ya = self._kkt_solve(q, rows, b)
            if x is None:
                return None
            Ax = A @ x
            viol_u = Ax - u
            viol_l = l - Ax
            viol = np.maximum(viol_u, viol_l)
            # a dependent active set can leave the regularized KKT solve inconsistent
            if rows.size and np.max(np.abs(Ax[rows] - b)) > ptol:
                return None
            viol[active != 0] = -np.inf
            y = np.zeros(self.m)
            y[rows] = ya
            # wrong-signed multipliers on inequality rows
            wrong = np.zeros(self.m)
            ineq_act = (active != 0) & ~eq
            wrong[ineq_act & (active > 0)] = -y[ineq_act & (active > 0)]
            wrong[ineq_act & (active < 0)] = y[ineq_act & (active < 0)]
            ymag = 1.0 + float(np.max(np.abs(y), initial=0.0))
            worst_v = int(np.argmax(viol)) if self.m else -1
            worst_w = int(np.argmax(wrong)) if self.m else -1
            if self.m and viol[worst_v] > ptol:
                active[worst_v] = 1 if viol_u[worst_v] >= viol_l[worst_v] else -1
                continue
            if self.m and wrong[worst_w] > cfg.tol_kkt * 1e-3 * ymag:
                active[worst_w] = 0
                continue
            return x, y, active
        return None

    def _kkt_residual(self, x, y, q):
        g = self.P @ x + q + (self.A.T @ y if self.m else 0.0)
        scale = max(1.0, float(np.max(np.abs(q), initial=0.0)),
                    float(np.max(np.abs(self.P @ x), initial=0.0)))
        return float(np.max(np.abs(g), initial=0.0)) / scale

    # -- public ------------------------------------------------------------
    def solve(self, q, l, u, x0=None, active0=None) -> QPResult:
        cfg = self.config
        q = np.asarray(q, dtype=float).ravel()
        l = np.clip(np.asarray(l, dtype=float).ravel(), -kernels.BIG, kernels.BIG)
        u = np.clip(np.asarray(u, dtype=float).ravel(), -kernels.BIG, kernels.BIG)
        if q.size != self.n or l.size != self.m or u.size != self.m:
            raise DimensionMismatch("q, l, u sizes do not match the workspace")
        if np.any(l > u + cfg.tol_feas):
            raise Infeasible("lower bound exceeds upper bound")

        if active0 is None and self.last_active is not None:
            active0 = self.last_active
        if active0 is not None:
            out = self._active_set_refine(q, l, u, np.asarray(active0, dtype=np.int8))
            if out is not None:
                return self._finish(q, *out, iterations=0)

        # ADMM on the Ruiz-scaled problem
        qs = self.D * q
        self._c = 1.0 / max(1.0, float(np.max(np.abs(qs), initial=0.0)),
                            float(np.max(np.abs(self.Ps), initial=0.0)))
        Ps = np.ascontiguousarray(self.Ps * self._c)
        qs = qs * self._c
        ls = self.E * l
        us = self.E * u
        ls = np.where(np.abs(l) >= kernels.BIG, -kernels.BIG, ls)
        us = np.where(np.abs(u) >= kernels.BIG, kernels.BIG, us)
        eqm = (us - ls) < 1e-12
        As = np.ascontiguousarray(self.As)
        rho = cfg.rho
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, float) / self.D
        x = np.ascontiguousarray(x)
        z = np.ascontiguousarray(np.clip(As @ x, ls, us)) if self.m else np.zeros(0)
        y = np.zeros(self.m)
        total = 0
        status = kernels.RUNNING
        for _ in range(6):
            rho_vec = np.where(eqm, 1e3 * rho, rho)
            Kinv = self._factor(rho_vec)
            it, status = kernels.admm_loop(
                Kinv, Ps, As, qs, ls, us, rho_vec, cfg.sigma, cfg.alpha,
                x, z, y, cfg.admm_max_iter // 6, cfg.eps_abs, cfg.eps_rel,
                cfg.eps_inf, cfg.check_every)
            total += it
            if status != kernels.RUNNING:
                break
            # adapt rho from the residual ratio
            Ax = As @ x
            rp = np.max(np.abs(Ax - z), initial=0.0) / max(1e-12, np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
            Aty = As.T @ y
            rd = np.max(np.abs(Ps @ x + qs + Aty), initial=0.0) / max(
                1e-12, np.max(np.abs(Ps @ x), initial=0.0), np.max(np.abs(Aty), initial=0.0), np.max(np.abs(qs), initial=0.0))
            rho = float(np.clip(rho * np.sqrt(rp / max(rd, 1e-12)), 1e-6, 1e6))

        if status == kernels.PRIMAL_INFEASIBLE:
            raise Infeasible("QP constraints are inconsistent (ADMM certificate)")
        if status == kernels.DUAL_INFEASIBLE:
            raise Unbounded("QP objective is unbounded below")

        x_un = self.D * x
        y_un = self.E * y / self._c
        z_un = z / self.E if self.m else z
        active = np.zeros(self.m, dtype=np.int8)
        if self.m:
            active[(z_un - l < -y_un) | (y_un < -1e-9 * max(1.0, np.max(np.abs(y_un))))] = -1
            active[(u - z_un < y_un) | (y_un > 1e-9 * max(1.0, np.max(np.abs(y_un))))] = 1
        out = self._active_set_refine(q, l, u, active)
        if out is None:
            out = self._active_set_refine(q, l, u, np.zeros(self.m, dtype=np.int8))
        if out is not None:
            return self._finish(q, *out, iterations=total)

        if status == kernels.SOLVED and self.m:
            viol = np.max(np.maximum(self.A @ x_un - u, l - self.A @ x_un), initial=0.0)
            if viol <= cfg.tol_feas * 100 and self._kkt_residual(x_un, y_un, q) <= cfg.tol_kkt:
                return QPResult(x=x_un, value=self._value(x_un, q), y=y_un, active=active,
                                iterations=total, polished=False)
        # decide between infeasible and a solver failure
        if self.m and not _feasible(self.A, l, u):
            raise Infeasible("QP constraints are inconsistent")
        raise MaxIterations(f"QP not solved after {total} ADMM iterations")

    def _value(self, x, q):
        return float(0.5 * x @ self.P @ x + q @ x)

    def _finish(self, q, x, y, active, iterations):
        self.last_active = active
        return QPResult(x=x, value=self._value(x, q), y=y, active=active,
                        iterations=iterations, polished=True)


def _feasible(A, l, u):
    n = A.shape[1]
    fin_u = u < kernels.BIG
    fin_l = l > -kernels.BIG
    H = np.vstack([A[fin_u], -A[fin_l]])
    h = np.concatenate([u[fin_u], -l[fin_l]])
    res = linprog(np.zeros(n), A_ub=H, b_ub=h, bounds=[(None, None)] * n, method="highs")
    return res.status == 0


def solve_qp(P, q, A_eq=None, b_eq=None, G=None, g=None, x0=None,
             config: NumericsConfig = DEFAULT) -> QPResult:
    """Minimize ``0.5 x'Px + q'x`` s.t. ``A_eq x = b_eq`` and ``G x <= g``."""
    P = _as2d(P, "P")
    n = P.shape[0]
    q = np.asarray(q, dtype=float).ravel()
    if P.shape != (n, n) or q.size != n:
        raise DimensionMismatch("P must be n x n and q of length n")
    if not np.allclose(P, P.T, atol=1e-10 * max(1.0, np.max(np.abs(P)))):
        raise ValueError("P must be symmetric")
    blocks, lo, hi = [], [], []
    if A_eq is not None and np.size(A_eq):
        Ae = np.asarray(A_eq, dtype=float).reshape(-1, n)
        be = np.asarray(b_eq, dtype=float).ravel()
        if Ae.shape[0] != be.size:
            raise DimensionMismatch("A_eq and b_eq disagree")
        blocks.append(Ae)
        lo.append(be)
        hi.append(be)
    if G is not None and np.size(G):
        Gm = np.asarray(G, dtype=float).reshape(-1, n)
        gv = np.asarray(g, dtype=float).ravel()
        if Gm.shape[0] != gv.size:
            raise DimensionMismatch("G and g disagree")
        blocks.append(Gm)
        lo.append(np.full(gv.size, -np.inf))
        hi.append(gv)
    A = np.vstack(blocks) if blocks else np.zeros((0, n))
    l = np.concatenate(lo) if lo else np.zeros(0)
    u = np.concatenate(hi) if hi else np.zeros(0)
    ws = QPWorkspace(P, A, config)
    return ws.solve(q, l, u, x0=x0)


# ---------------------------------------------------------------------------
# linear algebra


def spectral_radius(M) -> float:
    M = _as2d(M, "M")
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def solve_discrete_lyapunov(M, W, config: NumericsConfig = DEFAULT) -> np.ndarray:
    """Solve ``M' S M - S = -W`` by a Kronecker-product linear solve."""
    M = _as2d(M, "M")
    W = _as2d(W, "W")
    n = M.shape[0]
    if M.shape != (n, n) or W.shape != (n, n):
        raise DimensionMismatch("M and W must be square and of equal size")
    if spectral_radius(M) >= 1.0 - config.unstable_margin:
        raise UnstableMatrix(f"spectral radius {spectral_radius(M):.6g} >= 1")
    Mt = M.T
    # vec(Mt S M) = kron(M.T, Mt) vec(S) with column-major vec
    L = np.eye(n * n) - np.kron(M.T, Mt)
    s = np.linalg.solve(L, W.reshape(-1, order="F"))
    S = s.reshape(n, n, order="F")
    S = 0.5 * (S + S.T)
    return S


def lqr_gain(A, B, Q, R, config: NumericsConfig = DEFAULT) -> np.ndarray:
    """Infinite-horizon discrete LQR gain ``K`` with ``u = K x``.

    Fixed-point Riccati iteration; ``NotStabilizable`` when it diverges.
    """
    A = _as2d(A, "A")
    B = _as2d(B, "B")
    Q = _as2d(Q, "Q")
    R = _as2d(R, "R")
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DimensionMismatch("A, B, Q, R dimensions disagree")
    P = Q.copy()
    for _ in range(config.riccati_max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        K = -np.linalg.solve(G, BtP @ A)
        P_new = Q + A.T @ P @ A + A.T @ P @ B @ K
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)) or np.max(np.abs(P_new)) > 1e14:
            raise NotStabilizable("Riccati iteration diverged")
        if np.max(np.abs(P_new - P)) <= config.tol_riccati * max(1.0, np.max(np.abs(P_new))):
            P = P_new
            break
        P = P_new
    else:
        raise NotStabilizable("Riccati iteration did not converge")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NotStabilizable("closed loop not stable")
    return K


def min_eigenvalue(M) -> float:
    M = _as2d(M, "M")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def rank(M, tol: float = 1e-10) -> int:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
