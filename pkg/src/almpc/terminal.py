"""Terminal ingredients: LQR gain, Lyapunov weight, contractive terminal polytope."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySet, SynthesisFailed
from .excitation import VirtualSignalSpec
from .numerics import DEFAULT, NumericsConfig, lqr_gain, solve_discrete_lyapunov, spectral_radius
from .plant import ConstraintSets, LiftedPlant, steady_state_set
from .polytope import HPolytope, bounding_box, box, remove_redundancy, support

MAX_ITER = 50
HALVINGS = 5


@dataclass(frozen=True)
class TerminalDesign:
    K: np.ndarray
    S: np.ndarray
    Xf: HPolytope
    alpha_min: float
    lam: float
    rho: float
    signal: VirtualSignalSpec

    def summary(self) -> str:
        return (f"K={np.round(self.K, 6).tolist()} rho(A+BK)={self.rho:.6f} "
                f"Xf facets={self.Xf.n_rows} alpha_min={self.alpha_min:.6g} "
                f"lambda={self.lam:.6f} s_max={self.signal.s_max:g}")


def _disturbance_support(H, B, signal: VirtualSignalSpec) -> np.ndarray:
    """``support(B S, H_i)`` for a box ``S``: ``s_max * |B' H_i|_1``."""
    return signal.s_max * np.abs(H @ B).sum(axis=1)


def _input_support_ss(plant, constraints, config) -> np.ndarray:
    """Largest ``H_U u`` over admissible steady inputs, per input facet."""
    Zs = steady_state_set(plant, constraints)
    out = np.empty(constraints.U.n_rows)
    for i, Hi in enumerate(constraints.U.H):
        d = np.concatenate([np.zeros(plant.nx), Hi])
        out[i] = support(Zs, d, config)
    return out


def _contractive_subset(P: HPolytope, AK: np.ndarray, lam: float, config: NumericsConfig):
    """Largest ``lam``-contractive subset of ``P`` under ``AK`` (preimage iteration)."""
    F = remove_redundancy(P, config)
    for _ in range(MAX_ITER):
        G = F.H @ AK
        new_rows = []
        for Gi, hi in zip(G, F.h):
            if not np.any(Gi):
                continue
            if support(F, Gi, config) > lam * hi + config.tol_feas * max(1.0, abs(hi)):
                new_rows.append((Gi, lam * hi))
        if not new_rows:
            return F
        H = np.vstack([F.H] + [r[0][None, :] for r in new_rows])
        h = np.concatenate([F.h, [r[1] for r in new_rows]])
        F = remove_redundancy(HPolytope(H, h), config)
    raise SynthesisFailed(f"no contractive set within {MAX_ITER} iterations")


def _build(plant, constraints, K, AK, lam, signal, config):
    lo, hi = bounding_box(constraints.X, config)
    half = 0.5 * (hi - lo)
    start = box(-half, half)
    u_ss = _input_support_ss(plant, constraints, config)
    margin = constraints.U.h - u_ss - _disturbance_support(constraints.U.H, np.eye(plant.nu), signal)
    if np.any(margin <= 0):
        return None
    HK = constraints.U.H @ K
    keep = np.any(np.abs(HK) > 0, axis=1)
    P = HPolytope(np.vstack([start.H, HK[keep]]), np.concatenate([start.h, margin[keep]]))
    F = _contractive_subset(P, AK, lam, config)
    if np.any(F.h <= 0):
        raise SynthesisFailed("terminal set does not contain the origin in its interior")
    # certificate
    w = _disturbance_support(F.H, plant.B, signal)
    lam_rows = np.array([support(F, Hi @ AK, config) for Hi in F.H]) / F.h
    lam_cert = float(max(lam_rows.max(), 0.0))
    if np.any(lam_rows * F.h + w > F.h + config.tol_feas * np.maximum(1.0, np.abs(F.h))):
        raise SynthesisFailed("excitation too large: robust invariance certificate fails")
    alpha_min = float(np.max(w / ((1.0 - lam_cert) * F.h)))
    alpha_min = min(max(alpha_min, 1e-9), 1.0)
    return F, lam_cert, alpha_min


def synthesize(plant: LiftedPlant, constraints: ConstraintSets, Q, R, signal: VirtualSignalSpec,
               lam: float | None = None, config: NumericsConfig = DEFAULT) -> TerminalDesign:
    """LQR gain, Lyapunov weight and a robustly invariant terminal polytope.

    The terminal polytope is the largest ``lam``-contractive subset of the
    centered state box intersected with the input rows of the terminal law
    (so the input condition holds by construction).  If the input margin is
    exhausted, ``s_max`` is halved up to five times.
    """
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    K = lqr_gain(plant.A, plant.B, Q, R)
    AK = plant.A + plant.B @ K
    rho = spectral_radius(AK)
    S = solve_discrete_lyapunov(AK, Q + K.T @ R @ K)
    lam = 0.5 * (1.0 + rho) if lam is None else float(lam)
    if not rho < lam < 1.0:
        raise SynthesisFailed(f"contraction {lam} must lie in (rho(A+BK)={rho:.4g}, 1)")
    sig = signal
    for _ in range(HALVINGS + 1):
        try:
            built = _build(plant, constraints, K, AK, lam, sig, config)
        except EmptySet as exc:
            raise SynthesisFailed("terminal set became empty") from exc
        if built is not None:
            F, lam_cert, alpha_min = built
            design = TerminalDesign(K, S, F, alpha_min, lam_cert, rho, sig)
            if condition2_check(design, plant, constraints, sig, config):
                return design
        sig = VirtualSignalSpec(sig.s_max / 2.0, sig.gain2)
    raise SynthesisFailed(f"input condition fails even with s_max={sig.s_max * 2:g}")


def admissible_alpha_rows(design: TerminalDesign, constraints: ConstraintSets,
                          config: NumericsConfig = DEFAULT):
    """Rows ``G [xs; alpha] <= g`` keeping ``alpha Xf + xs`` inside ``X``."""
    sup = np.array([support(design.Xf, Hi, config) for Hi in constraints.X.H])
    G = np.column_stack([constraints.X.H, sup])
    return G, constraints.X.h.copy()


def condition2_check(design: TerminalDesign, plant: LiftedPlant, constraints: ConstraintSets,
                     signal: VirtualSignalSpec, config: NumericsConfig = DEFAULT) -> bool:
    """Terminal-law inputs stay in ``U`` for every state in ``Xf``, steady input and ``s``."""
    u_ss = _input_support_ss(plant, constraints, config)
    w = _disturbance_support(constraints.U.H, np.eye(plant.nu), signal)
    for i, Hi in enumerate(constraints.U.H):
        kx = support(design.Xf, design.K.T @ Hi, config)
        if kx + u_ss[i] + w[i] > constraints.U.h[i] + config.tol_feas:
            return False
    return True
