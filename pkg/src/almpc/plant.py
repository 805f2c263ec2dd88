"""Linear plant: ARX lifting, steady-state maps, constraint sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotControllable, NotObservable, RankDeficient
from .numerics import rank, solve_lp
from .polytope import HPolytope, bounding_box, is_empty

EQ_SLACK = 1e-9


def _ctrb(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


class LiftedPlant:
    """``x+ = A x + B u``, ``y = C x`` with rank and controllability checks.

    The state is measured, so observability is only tested on request: the
    stacked-history form of an ARX model is non-minimal as soon as both
    orders exceed one.  A common factor in ARX coefficients shows up as a
    loss of controllability instead.
    """

    def __init__(self, A, B, C, arx=None, check_observable=False):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        C = np.asarray(C, dtype=float)
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise DimensionMismatch("A must be square")
        B = B.reshape(nx, -1)
        C = C.reshape(-1, nx)
        self.A, self.B, self.C = A, B, C
        self.nx, self.nu, self.ny = nx, B.shape[1], C.shape[0]
        self.arx = arx
        for M in (A, B, C):
            M.setflags(write=False)
        if rank(_ctrb(A, B)) < nx:
            raise NotControllable("(A, B) is not controllable")
        if check_observable and rank(_ctrb(A.T, C.T)) < nx:
            raise NotObservable("(A, C) is not observable")
        blk = self.equilibrium_matrix()
        if rank(blk) != nx + self.ny:
            raise RankDeficient("equilibrium block matrix does not have rank nx + ny")
        # linear map r -> (xs, us)
        rhs = np.vstack([np.zeros((nx, self.ny)), np.eye(self.ny)])
        sol = np.linalg.lstsq(blk, rhs, rcond=None)[0]
        self.Mx = sol[:nx]
        self.Mu = sol[nx:]

    def equilibrium_matrix(self) -> np.ndarray:
        nx = self.nx
        return np.block([[self.A - np.eye(nx), self.B],
                         [self.C, np.zeros((self.ny, self.nu))]])

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, float) + self.B @ np.atleast_1d(np.asarray(u, float))

    def output(self, x) -> np.ndarray:
        return self.C @ np.asarray(x, float)

    def simulate(self, x0, inputs):
        """Outputs ``y_0 .. y_T`` and states under an input sequence."""
        x = np.asarray(x0, float)
        xs, ys = [x], [self.output(x)]
        for u in inputs:
            x = self.step(x, u)
            xs.append(x)
            ys.append(self.output(x))
        return np.array(xs), np.array(ys)

    def to_dict(self) -> dict:
        if self.arx is not None:
            return {"arx": {"a": list(self.arx[0]), "b": list(self.arx[1])}}
        return {"state_space": {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}}


def lift_arx(a, b) -> LiftedPlant:
    """State-space form of ``y_k = -sum a_i y_{k-i} + sum b_j u_{k-j}``.

    The state stacks ``[y_k, ..., y_{k-n+1}, u_{k-1}, ..., u_{k-m+1}]`` so that
    ``C`` picks the first entry; every entry is a measured signal.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n, m = a.size, b.size
    if n < 1 or m < 1:
        raise ValueError("ARX orders must be at least 1")
    nx = n + m - 1
    A = np.zeros((nx, nx))
    B = np.zeros((nx, 1))
    A[0, :n] = -a
    A[0, n:] = b[1:]
    for i in range(1, n):
        A[i, i - 1] = 1.0
    B[0, 0] = b[0]
    if m >= 2:
        B[n, 0] = 1.0
        for j in range(1, m - 1):
            A[n + j, n + j - 1] = 1.0
    C = np.zeros((1, nx))
    C[0, 0] = 1.0
    return LiftedPlant(A, B, C, arx=(a.tolist(), b.tolist()))


@dataclass(frozen=True)
class ConstraintSets:
    X: HPolytope
    U: HPolytope

    def __post_init__(self):
        for name, P in (("X", self.X), ("U", self.U)):
            if is_empty(P):
                raise ValueError(f"constraint set {name} is empty")
            bounding_box(P)  # raises UnboundedSet

    def Z_rows(self):
        """Block-diagonal ``(H, h)`` of ``X x U`` over the stacked ``(x, u)``."""
        nx, nu = self.X.dim, self.U.dim
        H = np.block([[self.X.H, np.zeros((self.X.n_rows, nu))],
                      [np.zeros((self.U.n_rows, nx)), self.U.H]])
        return H, np.concatenate([self.X.h, self.U.h])

    def contains(self, x, u, tol=1e-9) -> bool:
        return self.X.contains(x, tol) and self.U.contains(np.atleast_1d(u), tol)


def steady_state_from_output(plant: LiftedPlant, r):
    """``(xs, us)`` solving ``(A - I) xs + B us = 0``, ``C xs = r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    rhs = np.concatenate([np.zeros(plant.nx), r])
    sol = np.linalg.lstsq(plant.equilibrium_matrix(), rhs, rcond=None)[0]
    return sol[:plant.nx], sol[plant.nx:]


def steady_state_set(plant: LiftedPlant, constraints: ConstraintSets) -> HPolytope:
    """``{(x, u) in X x U : (A - I) x + B u = 0}`` with equalities as slack pairs."""
    H, h = constraints.Z_rows()
    E = np.hstack([plant.A - np.eye(plant.nx), plant.B])
    keep = np.any(E != 0.0, axis=1)
    E = E[keep]
    return HPolytope(np.vstack([H, E, -E]),
                     np.concatenate([h, np.full(2 * len(E), EQ_SLACK)]))


def reachable_outputs(plant: LiftedPlant, constraints: ConstraintSets) -> HPolytope:
    """Outputs ``r`` whose equilibrium lies in ``X x U`` (over ``r`` directly)."""
    H, h = constraints.Z_rows()
    M = np.vstack([plant.Mx, plant.Mu])
    G = H @ M
    keep = np.any(np.abs(G) > 1e-14, axis=1)
    if np.any(~keep & (h < 0)):
        raise ValueError("no admissible equilibrium exists")
    return HPolytope(G[keep], h[keep])


def output_bounds(plant: LiftedPlant, constraints: ConstraintSets):
    """Per-output interval of ``C x`` over ``X`` (the admissible output box)."""
    lo = np.empty(plant.ny)
    hi = np.empty(plant.ny)
    for i in range(plant.ny):
        c = plant.C[i]
        hi[i] = -solve_lp(-c, constraints.X.H, constraints.X.h).value
        lo[i] = solve_lp(c, constraints.X.H, constraints.X.h).value
    return lo, hi


def reachable_bounds(plant: LiftedPlant, constraints: ConstraintSets):
    return bounding_box(reachable_outputs(plant, constraints))
