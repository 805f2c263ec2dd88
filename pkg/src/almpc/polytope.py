"""H-representation polytopes ``{x : H x <= h}``.

Polytopes are immutable value objects; every operation returns a new one.
Exact geometry (vertices, area) is only offered up to dimension 3.
"""
from __future__ import annotations

import csv
import io
import itertools

import numpy as np

from . import kernels
from .errors import (DimensionMismatch, EmptySet, Infeasible,
                     NonPositiveScale, Unbounded, UnboundedSet)
from .numerics import DEFAULT, NumericsConfig, solve_lp

BURN_IN = 100
THIN = 5
VOLUME_MC_SAMPLES = 100_000


class HPolytope:
    __slots__ = ("_H", "_h")

    def __init__(self, H, h):
        H = np.array(H, dtype=float, ndmin=2)
        h = np.array(h, dtype=float).ravel()
        if H.shape[0] != h.size:
            raise DimensionMismatch(f"H has {H.shape[0]} rows but h has {h.size} entries")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("polytope data must be finite")
        if h.size and np.any(np.all(H == 0.0, axis=1)):
            raise ValueError("rows with a zero normal are not allowed")
        H.setflags(write=False)
        h.setflags(write=False)
        self._H = H
        self._h = h

    @property
    def H(self) -> np.ndarray:
        return self._H

    @property
    def h(self) -> np.ndarray:
        return self._h

    @property
    def dim(self) -> int:
        return self._H.shape[1]

    @property
    def n_rows(self) -> int:
        return self._h.size

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, rows={self.n_rows})"

    def contains(self, x, tol: float = 1e-9) -> bool | np.ndarray:
        """Membership of one point (1-D) or many points (rows of a 2-D array)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return bool(np.all(self._H @ x <= self._h + tol))
        return np.all(x @ self._H.T <= self._h + tol, axis=1)

    def same_as(self, other: "HPolytope") -> bool:
        return (self._H.shape == other._H.shape and np.array_equal(self._H, other._H)
                and np.array_equal(self._h, other._h))

    def to_dict(self) -> dict:
        return {"H": self._H.tolist(), "h": self._h.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "HPolytope":
        return cls(data["H"], data["h"])


# ---------------------------------------------------------------------------
# constructors


def box(lo, hi) -> HPolytope:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n = lo.size
    return HPolytope(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))


def symmetric_box(bound, dim: int | None = None) -> HPolytope:
    bound = np.atleast_1d(np.asarray(bound, dtype=float))
    if dim is not None and bound.size == 1:
        bound = np.full(dim, bound[0])
    return box(-bound, bound)


def regular_polygon(apothem: float, sides: int = 8, center=(0.0, 0.0)) -> HPolytope:
    """Regular polygon with every facet at distance ``apothem`` from ``center``.

    With ``apothem = r`` the polygon contains the disk of radius ``r``.
    """
    ang = 2.0 * np.pi * np.arange(sides) / sides
    H = np.column_stack([np.cos(ang), np.sin(ang)])
    c = np.asarray(center, dtype=float)
    return HPolytope(H, apothem + H @ c)


# ---------------------------------------------------------------------------
# operations


def intersect(P: HPolytope, Q: HPolytope) -> HPolytope:
    if P.dim != Q.dim:
        raise DimensionMismatch(f"dimensions {P.dim} and {Q.dim} differ")
    return HPolytope(np.vstack([P.H, Q.H]), np.concatenate([P.h, Q.h]))


def chebyshev_center(P: HPolytope, config: NumericsConfig = DEFAULT):
    """Center and radius of the largest inscribed ball (negative radius: empty)."""
    if P.n_rows == 0:
        raise Unbounded("polytope without constraints")
    norms = np.linalg.norm(P.H, axis=1)
    c = np.zeros(P.dim + 1)
    c[-1] = -1.0
    A = np.column_stack([P.H, norms])
    try:
        res = solve_lp(c, A, P.h, config=config)
    except Unbounded as exc:
        raise Unbounded("inscribed-ball radius is unbounded") from exc
    return res.x[:-1], float(res.x[-1])


def is_empty(P: HPolytope, config: NumericsConfig = DEFAULT) -> bool:
    _, radius = chebyshev_center(P, config)
    return radius < -config.tol_feas


def support(P: HPolytope, direction, config: NumericsConfig = DEFAULT) -> float:
    """``max <direction, x>`` over ``P``."""
    d = np.asarray(direction, dtype=float).ravel()
    if d.size != P.dim:
        raise DimensionMismatch("direction has the wrong length")
    try:
        res = solve_lp(-d, P.H, P.h, config=config)
    except Infeasible as exc:
        raise EmptySet("support of an empty set") from exc
    return -res.value


def is_subset(Q: HPolytope, P: HPolytope, tol: float = 1e-8,
              config: NumericsConfig = DEFAULT) -> bool:
    """True when ``Q`` is contained in ``P`` (one support LP per row of ``P``)."""
    if P.dim != Q.dim:
        raise DimensionMismatch("dimensions differ")
    if Q.same_as(P):
        return True
    for Hi, hi in zip(P.H, P.h):
        if support(Q, Hi, config) > hi + tol * max(1.0, abs(hi)):
            return False
    return True


def _dedupe(H, h):
    norms = np.linalg.norm(H, axis=1)
    Hn = H / norms[:, None]
    hn = h / norms
    keep = []
    for i in range(len(hn)):
        dup = False
        for j in keep:
            if np.allclose(Hn[i], Hn[j], atol=1e-12, rtol=0):
                if hn[i] < hn[j]:
                    keep[keep.index(j)] = i
                dup = True
                break
        if not dup:
            keep.append(i)
    keep.sort()
    return H[keep], h[keep]


def remove_redundancy(P: HPolytope, config: NumericsConfig = DEFAULT) -> HPolytope:
    """Drop every row whose removal leaves the point set unchanged (LP certified)."""
    if is_empty(P, config):
        raise EmptySet("cannot reduce an empty polytope")
    H, h = _dedupe(np.array(P.H), np.array(P.h))
    keep = np.ones(len(h), dtype=bool)
    for i in range(len(h)):
        keep[i] = False
        Hi = H[keep]
        hi = h[keep]
        # cap the objective so the LP stays bounded
        A = np.vstack([Hi, H[i]])
        b = np.concatenate([hi, [h[i] + 1.0]])
        res = solve_lp(-H[i], A, b, config=config)
        if -res.value > h[i] + config.tol_feas * max(1.0, abs(h[i])):
            keep[i] = True
    return HPolytope(H[keep], h[keep])


def scale_about(P: HPolytope, center, alpha: float) -> HPolytope:
    """``{x : H (x - center) <= alpha h}``."""
    if alpha <= 0:
        raise NonPositiveScale(f"scale must be positive, got {alpha}")
    c = np.asarray(center, dtype=float).ravel()
    return HPolytope(P.H, alpha * P.h + P.H @ c)


def bounding_box(P: HPolytope, config: NumericsConfig = DEFAULT):
    lo = np.empty(P.dim)
    hi = np.empty(P.dim)
    for j in range(P.dim):
        e = np.zeros(P.dim)
        e[j] = 1.0
        try:
            hi[j] = support(P, e, config)
            lo[j] = -support(P, -e, config)
        except Unbounded as exc:
            raise UnboundedSet("polytope is unbounded") from exc
    return lo, hi


def vertices(P: HPolytope, tol: float = 1e-9) -> np.ndarray:
    """Vertex enumeration for dimension <= 3; 2-D output is counter-clockwise."""
    d = P.dim
    if d > 3:
        raise NotImplementedError("vertex enumeration is limited to dimension <= 3")
    H, h = P.H, P.h
    pts = []
    for rows in itertools.combinations(range(len(h)), d):
        M = H[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(H @ x <= h + tol * np.maximum(1.0, np.abs(h))):
            pts.append(x)
    if not pts:
        return np.zeros((0, d))
    V = np.array(pts)
    # dedupe
    uniq = [V[0]]
    for v in V[1:]:
        if min(np.max(np.abs(v - u)) for u in uniq) > 1e-9:
            uniq.append(v)
    V = np.array(uniq)
    if d == 2 and len(V) > 2:
        c = V.mean(axis=0)
        V = V[np.argsort(np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0]))]
    return V


def volume(P: HPolytope, rng: np.random.Generator | None = None,
           config: NumericsConfig = DEFAULT) -> float:
    """Exact length/area in dimension 1-2, Monte Carlo over the bounding box above."""
    if is_empty(P, config):
        return 0.0
    if P.dim == 1:
        lo, hi = bounding_box(P, config)
        return float(hi[0] - lo[0])
    if P.dim == 2:
        V = vertices(P)
        if len(V) < 3:
            return 0.0
        x, y = V[:, 0], V[:, 1]
        return float(0.5 * abs(x @ np.roll(y, -1) - y @ np.roll(x, -1)))
    lo, hi = bounding_box(P, config)
    rng = np.random.default_rng(0) if rng is None else rng
    pts = lo + (hi - lo) * rng.random((VOLUME_MC_SAMPLES, P.dim))
    frac = np.mean(P.contains(pts))
    return float(frac * np.prod(hi - lo))


def sample_uniform(P: HPolytope, count: int, rng: np.random.Generator,
                   config: NumericsConfig = DEFAULT, start=None) -> np.ndarray:
    """Hit-and-run samples (burn-in 100, thinning 5) from the Chebyshev center."""
    try:
        center, radius = chebyshev_center(P, config)
    except Unbounded as exc:
        raise UnboundedSet("cannot sample an unbounded polytope") from exc
    if radius < -config.tol_feas:
        raise EmptySet("cannot sample an empty polytope")
    x0 = center if start is None else np.asarray(start, dtype=float)
    steps = BURN_IN + count * THIN
    directions = rng.standard_normal((steps, P.dim))
    uniforms = rng.random(steps)
    if radius <= 1e-12:
        return np.tile(x0, (count, 1))
    # normalize rows so the chord tolerance is scale-free
    norms = np.linalg.norm(P.H, axis=1)
    H = np.ascontiguousarray(P.H / norms[:, None])
    h = np.ascontiguousarray(P.h / norms)
    out, status = kernels.hit_and_run(H, h, np.ascontiguousarray(x0), count, BURN_IN, THIN,
                                      np.ascontiguousarray(directions), uniforms)
    if status == kernels.UNBOUNDED_CHORD:
        raise UnboundedSet("hit-and-run chord is unbounded")
    return np.asarray(out)


# ---------------------------------------------------------------------------
# CSV


def vertices_csv(P: HPolytope) -> str:
    """Closed 2-D vertex loop as ``x,y`` CSV (first vertex repeated at the end)."""
    if P.dim != 2:
        raise DimensionMismatch("vertex CSV is only defined for 2-D polytopes")
    V = vertices(P)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y"])
    for v in list(V) + ([V[0]] if len(V) else []):
        w.writerow([repr(float(v[0])), repr(float(v[1]))])
    return buf.getvalue()
