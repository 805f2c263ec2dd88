"""Set-membership parameter estimation and the moment pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .environment import RegressorSpec, optimum_map_batch
from .errors import EmptySet
from .numerics import DEFAULT, NumericsConfig
from .plant import ConstraintSets, LiftedPlant, output_bounds, reachable_bounds
from .polytope import (HPolytope, intersect, is_empty, remove_redundancy,
                       sample_uniform, support, volume)

DEFAULT_SAMPLES = 2000


def nonfalsified_set(spec: RegressorSpec, V: HPolytope, y, z: float) -> HPolytope:
    """Parameters consistent with measurement ``z`` at output ``y`` under noise set ``V``."""
    phi = np.atleast_1d(spec.phi(y))
    Hv = V.H[:, :1]
    H = -Hv @ phi[None, :]
    h = V.h - Hv[:, 0] * (float(z) - spec.g(y))
    return HPolytope(H, h)


@dataclass
class ParamEstimate:
    theta_set: HPolytope
    theta_bar: np.ndarray
    r_bar: float
    P_r: float
    xs_bar: np.ndarray
    us_bar: np.ndarray
    P_x: np.ndarray
    P_u: np.ndarray
    samples: np.ndarray = field(repr=False)
    r_samples: np.ndarray = field(repr=False)
    volume: float = float("nan")
    reset: bool = False
    changed: bool = True

    @property
    def dim(self) -> int:
        return self.theta_set.dim


class Estimator:
    """Holds ``Theta_k`` for one run and recomputes moments when it changes."""

    def __init__(self, plant: LiftedPlant, constraints: ConstraintSets, spec: RegressorSpec,
                 V: HPolytope, theta0: HPolytope, samples: int = DEFAULT_SAMPLES,
                 seed=0, config: NumericsConfig = DEFAULT, track_volume: bool = True):
        if theta0.dim != spec.p:
            raise ValueError(f"prior set has dimension {theta0.dim}, basis has {spec.p}")
        self.plant, self.constraints, self.spec, self.V = plant, constraints, spec, V
        self.theta0 = theta0
        self.M = int(samples)
        self.config = config
        self.track_volume = track_volume
        self.rng = np.random.default_rng(seed)
        self.y_lo, self.y_hi = output_bounds(plant, constraints)
        self.r_lo, self.r_hi = reachable_bounds(plant, constraints)
        self.info: list[tuple[float, float | None]] = []
        self.resets = 0
        self.estimate = self._moments(remove_redundancy(theta0, config), reset=False)

    # -- moments ----------------------------------------------------------
    def moments_of(self, theta_set: HPolytope, samples=None) -> tuple:
        """``(theta_bar, r_samples)`` with each ``r`` clipped to the reachable interval."""
        if samples is None:
            samples = sample_uniform(theta_set, self.M, self.rng, self.config)
        r = optimum_map_batch(self.spec, samples, self.y_lo, self.y_hi)[:, 0]
        return samples, np.clip(r, self.r_lo[0], self.r_hi[0])

    def _moments(self, theta_set: HPolytope, reset: bool) -> ParamEstimate:
        if is_empty(theta_set, self.config):
            raise EmptySet("parameter set is empty")
        samples, r = self.moments_of(theta_set)
        r_bar = float(r.mean())
        P_r = float(r.var())
        mx = self.plant.Mx[:, 0]
        mu = self.plant.Mu[:, 0]
        vol = volume(theta_set, config=self.config) if self.track_volume else float("nan")
        return ParamEstimate(
            theta_set=theta_set, theta_bar=samples.mean(axis=0), r_bar=r_bar, P_r=P_r,
            xs_bar=mx * r_bar, us_bar=mu * r_bar,
            P_x=np.outer(mx, mx) * P_r, P_u=np.outer(mu, mu) * P_r,
            samples=samples, r_samples=r, volume=vol, reset=reset)

    # -- measurement update -------------------------------------------------
    def cuts(self, theta_set: HPolytope, delta: HPolytope) -> bool:
        """True when some row of ``delta`` removes part of ``theta_set``."""
        for Hi, hi in zip(delta.H, delta.h):
            if support(theta_set, Hi, self.config) > hi + self.config.tol_feas * max(1.0, abs(hi)):
                return True
        return False

    def update(self, y, z: float, u=None) -> ParamEstimate:
        """Intersect with the slab of ``(y, z)``; restore the prior if falsified."""
        self.info.append((float(z), None if u is None else float(np.atleast_1d(u)[0])))
        delta = nonfalsified_set(self.spec, self.V, y, z)
        cur = self.estimate.theta_set
        if not self.cuts(cur, delta):
            self.estimate = replace(self.estimate, reset=False, changed=False)
            return self.estimate
        merged = intersect(cur, delta)
        try:
            reduced = remove_redundancy(merged, self.config)
        except EmptySet:
            self.resets += 1
            self.estimate = self._moments(remove_redundancy(self.theta0, self.config), reset=True)
            return self.estimate
        self.estimate = self._moments(reduced, reset=False)
        return self.estimate


def degenerate_estimate(plant: LiftedPlant, constraints: ConstraintSets, spec: RegressorSpec,
                        theta, half_width: float = 1e-9, samples: int = 50) -> ParamEstimate:
    """Estimate for a (nearly) known parameter: a tiny box around ``theta``."""
    from .polytope import box

    theta = np.asarray(theta, float)
    V = HPolytope([[1.0], [-1.0]], [1.0, 1.0])
    est = Estimator(plant, constraints, spec, V, box(theta - half_width, theta + half_width),
                    samples=samples, track_volume=False)
    return est.estimate
