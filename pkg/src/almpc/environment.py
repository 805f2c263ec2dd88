"""Unknown environment: regressors, measurements, the optimum map, scenarios.

A measurement is ``z = g(y) + phi(y)' theta + v`` where ``phi`` is a list of
monomials in the (optionally normalized) plant output, ``g`` a known offset
polynomial and ``v`` bounded noise.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import NoUniqueExtremum, UnknownScenario
from .plant import ConstraintSets, LiftedPlant, output_bounds
from .polytope import HPolytope, bounding_box, box, regular_polygon, symmetric_box

GRID_CELLS = 512
ROOT_TOL = 1e-10
TIE_TOL = 1e-8


class RegressorSpec:
    """Monomial regressor over ``n_out`` output axes.

    ``exponents[j]`` is the exponent tuple of basis function ``j``; ``offset``
    is a list of ``(coefficient, exponent tuple)`` terms.  Each axis may be
    normalized as ``(y - center) / scale`` before the monomials are formed.
    """

    def __init__(self, exponents, offset=(), center=None, scale=None):
        self.exponents = np.array(exponents, dtype=int, ndmin=2)
        self.n_out = self.exponents.shape[1]
        self.offset = [(float(c), tuple(int(e) for e in np.atleast_1d(ex))) for c, ex in offset]
        for _, ex in self.offset:
            if len(ex) != self.n_out:
                raise ValueError("offset exponent has the wrong number of axes")
        self.center = np.zeros(self.n_out) if center is None else np.atleast_1d(np.asarray(center, float))
        self.scale = np.ones(self.n_out) if scale is None else np.atleast_1d(np.asarray(scale, float))
        if np.any(self.scale <= 0):
            raise ValueError("normalization scale must be positive")

    @classmethod
    def monomials(cls, order: int, constant: bool = False, offset=(), center=0.0, scale=1.0):
        start = 0 if constant else 1
        return cls([(k,) for k in range(start, order + 1)], offset, [center], [scale])

    @property
    def p(self) -> int:
        return self.exponents.shape[0]

    @property
    def order(self) -> int:
        return int(self.exponents.sum(axis=1).max())

    def paper_order(self) -> int | None:
        """``n`` when the basis is exactly ``(y, y^2, ..., y^n)`` on one raw axis."""
        if self.n_out != 1 or self.center[0] != 0 or self.scale[0] != 1:
            return None
        ex = self.exponents[:, 0]
        if np.array_equal(ex, np.arange(1, ex.size + 1)):
            return int(ex.size)
        return None

    def _norm(self, Y):
        return (Y - self.center) / self.scale

    def phi(self, y) -> np.ndarray:
        """Basis values; ``y`` of shape (n_out,) or (T, n_out) (or (T,) when n_out == 1)."""
        Y = np.asarray(y, dtype=float)
        single = Y.ndim == 0 or (Y.ndim == 1 and Y.size == self.n_out and self.n_out > 1) or (Y.ndim == 1 and self.n_out == 1 and Y.size == 1)
        Y = Y.reshape(-1, self.n_out)
        Yn = self._norm(Y)
        out = np.prod(Yn[:, None, :] ** self.exponents[None, :, :], axis=2)
        return out[0] if single else out

    def g(self, y):
        Y = np.asarray(y, dtype=float)
        single = Y.ndim == 0 or Y.size == self.n_out
        Yn = self._norm(Y.reshape(-1, self.n_out))
        val = np.zeros(Yn.shape[0])
        for c, ex in self.offset:
            val += c * np.prod(Yn ** np.array(ex), axis=1)
        return float(val[0]) if single else val

    def model(self, y, theta):
        return self.g(y) + self.phi(y) @ np.asarray(theta, float)

    def to_dict(self) -> dict:
        return {"exponents": self.exponents.tolist(),
                "offset": [[c, list(ex)] for c, ex in self.offset],
                "center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RegressorSpec":
        return cls(d["exponents"], [(c, tuple(ex)) for c, ex in d.get("offset", [])],
                   d.get("center"), d.get("scale"))

    # -- per-axis polynomial structure -------------------------------------
    def axis_polynomial_map(self, axis: int):
        """Linear map ``theta -> ascending coefficients`` of the axis polynomial.

        Requires a separable model (no cross terms involving ``axis``).
        Constant terms are dropped: they do not move the argmax.
        Returns ``(L, c0)`` with coefficients ``L @ theta + c0``.
        """
        others = [k for k in range(self.n_out) if k != axis]
        terms = [(j, ex) for j, ex in enumerate(self.exponents)]
        deg = 0
        for _, ex in terms:
            if ex[axis] > 0 and any(ex[o] > 0 for o in others):
                raise NotImplementedError("cross terms are not supported by the optimum map")
            deg = max(deg, int(ex[axis]))
        for _, ex in self.offset:
            if ex[axis] > 0 and any(ex[o] > 0 for o in others):
                raise NotImplementedError("cross terms are not supported by the optimum map")
            deg = max(deg, int(ex[axis]))
        L = np.zeros((deg + 1, self.p))
        c0 = np.zeros(deg + 1)
        for j, ex in terms:
            if ex[axis] > 0:
                L[ex[axis], j] += 1.0
        for c, ex in self.offset:
            if ex[axis] > 0:
                c0[ex[axis]] += c
        return L, c0


# ---------------------------------------------------------------------------
# optimum map


def _polyval(C, t):
    """Evaluate ascending coefficient rows ``C`` (M, d+1) at points ``t`` (M, K)."""
    out = np.zeros_like(t)
    for k in range(C.shape[1] - 1, -1, -1):
        out = out * t + C[:, k:k + 1]
    return out


def _poly_argmax(C, lo, hi, strict=False):
    """Argmax of each polynomial row of ``C`` over ``[lo, hi]`` (normalized axis).

    Candidates: interior critical points (sign changes of the derivative on a
    512-cell grid, refined by bisection to 1e-10) and both endpoints.
    """
    M, d1 = C.shape
    deg = d1 - 1
    if deg <= 0:
        if strict:
            raise NoUniqueExtremum("constant objective")
        return np.full(M, 0.5 * (lo + hi))
    dC = C[:, 1:] * np.arange(1, d1)[None, :]
    cand_t = [np.full((M, 1), lo), np.full((M, 1), hi)]
    if deg == 2:
        a = C[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(a < 0, -C[:, 1] / (2 * a), lo)
        v = np.clip(v, lo, hi)
        cand_t.append(v[:, None])
    elif deg > 2:
        grid = np.linspace(lo, hi, GRID_CELLS + 1)
        D = _polyval(dC, np.broadcast_to(grid, (M, grid.size)).copy())
        s = np.sign(D)
        rows, cells = np.nonzero((s[:, :-1] > 0) & (s[:, 1:] <= 0))
        if rows.size:
            a = grid[cells].copy()
            b = grid[cells + 1].copy()
            Cr = dC[rows]
            for _ in range(60):
                mid = 0.5 * (a + b)
                fm = _polyval(Cr, mid[:, None])[:, 0]
                pos = fm > 0
                a = np.where(pos, mid, a)
                b = np.where(pos, b, mid)
                if np.max(b - a) < ROOT_TOL:
                    break
            roots = 0.5 * (a + b)
            # scatter roots into a padded candidate matrix
            counts = np.bincount(rows, minlength=M)
            width = int(counts.max())
            R = np.full((M, width), np.nan)
            order = np.argsort(rows, kind="stable")
            rs = rows[order]
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            pos_in = np.arange(rs.size) - starts[rs]
            R[rs, pos_in] = roots[order]
            cand_t.append(R)
    T = np.hstack(cand_t)
    vals = _polyval(C, np.nan_to_num(T, nan=lo))
    vals = np.where(np.isnan(T), -np.inf, vals)
    best = np.argmax(vals, axis=1)
    arg = T[np.arange(M), best]
    if strict:
        vbest = vals[np.arange(M), best]
        for i in range(M):
            others = np.abs(T[i] - arg[i]) > 1e-6
            if np.any(others & (vals[i] >= vbest[i] - TIE_TOL)):
                raise NoUniqueExtremum("two candidates tie")
            if abs(arg[i] - lo) < 1e-12 or abs(arg[i] - hi) < 1e-12:
                slope = _polyval(dC[i:i + 1], np.array([[arg[i]]]))[0, 0] if deg > 0 else 0.0
                if abs(slope) > 1e-8:
                    raise NoUniqueExtremum("argmax is a boundary point")
    return arg


def optimum_map_batch(spec: RegressorSpec, thetas, lo, hi, strict: bool = False) -> np.ndarray:
    """Argmax output for every row of ``thetas``; shape (M, n_out)."""
    Th = np.atleast_2d(np.asarray(thetas, dtype=float))
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    out = np.empty((Th.shape[0], spec.n_out))
    for a in range(spec.n_out):
        L, c0 = spec.axis_polynomial_map(a)
        C = Th @ L.T + c0
        tlo = (lo[a] - spec.center[a]) / spec.scale[a]
        thi = (hi[a] - spec.center[a]) / spec.scale[a]
        out[:, a] = spec.center[a] + spec.scale[a] * _poly_argmax(C, tlo, thi, strict)
    return out


def optimum_map(spec: RegressorSpec, theta, lo, hi):
    """Unique maximizer of ``g(y) + phi(y)' theta`` over the output box.

    Returns a float for single-output specs.  Raises ``NoUniqueExtremum`` on
    ties or when the maximum sits on a boundary with nonzero slope.
    """
    r = optimum_map_batch(spec, np.asarray(theta, float)[None, :], lo, hi, strict=True)[0]
    return float(r[0]) if spec.n_out == 1 else r


# ---------------------------------------------------------------------------
# environment


class Environment:
    """Ground truth ``theta*``, noise set and a seeded noise generator."""

    def __init__(self, spec: RegressorSpec, theta_star, V: HPolytope, seed: int = 0):
        self.spec = spec
        self.theta_star = np.asarray(theta_star, dtype=float).copy()
        if self.theta_star.size != spec.p:
            raise ValueError(f"theta* has {self.theta_star.size} entries, basis has {spec.p}")
        if V.dim != 1:
            raise ValueError("noise set must be one-dimensional")
        self.V = V
        lo, hi = bounding_box(V)
        self.v_lo, self.v_hi = float(lo[0]), float(hi[0])
        self.rng = np.random.default_rng(seed)

    def noise_free(self, y) -> float:
        return float(self.spec.model(y, self.theta_star))

    def measure(self, y, noise=None) -> float:
        v = self.rng.uniform(self.v_lo, self.v_hi) if noise is None else float(noise)
        return self.noise_free(y) + v


# ---------------------------------------------------------------------------
# scenarios




@dataclass
class Loop:
    """One single-input single-output closed loop with its environment."""

    name: str
    plant: LiftedPlant
    constraints: ConstraintSets
    spec: RegressorSpec
    theta_star: np.ndarray
    V: HPolytope
    theta0: HPolytope
    x0: np.ndarray
    schedule: list = field(default_factory=list)  # [(step, theta_star)]

    def environment(self, seed) -> Environment:
        return Environment(self.spec, self.theta_star, self.V, seed)

    def output_box(self):
        return output_bounds(self.plant, self.constraints)

    def theta_at(self, k: int) -> np.ndarray:
        th = self.theta_star
        for step, t in sorted(self.schedule, key=lambda e: e[0]):
            if k >= step:
                th = np.asarray(t, float)
        return th

    def r_star(self, k: int) -> float:
        lo, hi = self.output_box()
        return float(optimum_map_batch(self.spec, self.theta_at(k)[None, :], lo, hi)[0, 0])


@dataclass
class Scenario:
    name: str
    loops: list
    steps: int
    controller: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    band_frac: float = 0.05
    band_floor: float = 0.0  # band = band_frac * max(|r*|, band_floor)
    meta: dict = field(default_factory=dict)

    @property
    def loop(self) -> Loop:
        if len(self.loops) != 1:
            raise ValueError(f"scenario {self.name!r} has {len(self.loops)} loops")
        return self.loops[0]


def _numerical(**kw) -> Scenario:
    A = [[1.1, 2.0], [0.0, 0.95]]
    plant = LiftedPlant(A, [[0.0], [0.079]], [[0.0, 1.0]])
    cons = ConstraintSets(symmetric_box(25.0, 2), symmetric_box(5.0, 1))
    spec = RegressorSpec([(0,), (1,)], offset=[(-1.0, (2,))])
    loop = Loop("numerical", plant, cons, spec, np.array([-1.0, 2.0]), symmetric_box(1.0, 1),
                regular_polygon(3.0, 8), np.array([0.0, 0.5]))
    return Scenario("numerical", [loop], steps=100, controller={"D": 1000.0}, band_floor=1.0)


# single-diode PV curve, power in units of 100 W
PV_ISC = 8.0
PV_VT = 1.2
PV_VOC = 37.0
PV_V_CENTER = 28.0
PV_V_SCALE = 8.0
PV_V_RANGE = (20.0, 36.0)
PV_ORDER = 10
PV_G_RANGE = (0.3, 1.1)


def pv_power(V, irradiance):
    i0 = PV_ISC / (np.exp(PV_VOC / PV_VT) - 1.0)
    V = np.asarray(V, dtype=float)
    return V * (irradiance * PV_ISC - i0 * (np.exp(V / PV_VT) - 1.0)) / 100.0


def pv_spec() -> RegressorSpec:
    return RegressorSpec.monomials(PV_ORDER, constant=True, center=PV_V_CENTER, scale=PV_V_SCALE)


def pv_theta(irradiance: float, spec: RegressorSpec | None = None) -> np.ndarray:
    """Least-squares fit of the PV curve on 400 admissible voltages."""
    spec = pv_spec() if spec is None else spec
    V = np.linspace(*PV_V_RANGE, 400)
    th, *_ = np.linalg.lstsq(spec.phi(V), pv_power(V, irradiance), rcond=None)
    return th


def pv_prior(spec: RegressorSpec | None = None) -> HPolytope:
    """Box prior covering every irradiance in ``PV_G_RANGE`` with a 10% shape margin."""
    spec = pv_spec() if spec is None else spec
    t_lo, t_hi = pv_theta(PV_G_RANGE[0], spec), pv_theta(PV_G_RANGE[1], spec)
    mid = 0.5 * (t_lo + t_hi)
    half = 0.6 * np.abs(t_hi - t_lo) + 0.1 * np.abs(mid) + 0.01
    return box(mid - half, mid + half)


def _mppt(**kw) -> Scenario:
    plant = LiftedPlant([[1.0]], [[1.0]], [[1.0]])
    cons = ConstraintSets(box([PV_V_RANGE[0]], [PV_V_RANGE[1]]), symmetric_box(1.0, 1))
    spec = pv_spec()
    levels = kw.get("irradiance") or [(0, 1.0), (100, 0.6), (200, 0.85)]
    thetas = [(s, pv_theta(g, spec)) for s, g in levels]
    loop = Loop("mppt", plant, cons, spec, thetas[0][1], symmetric_box(0.01, 1),
                pv_prior(spec), np.array([24.0]), schedule=thetas[1:])
    return Scenario("mppt", [loop], steps=300, controller={"al_budget": 100},
                    baseline={"po_step": 0.4, "q_bins": 32, "q_actions": [-1.0, -0.25, 0.0, 0.25, 1.0]},
                    meta={"irradiance": [[int(s), float(g)] for s, g in levels]})


LIGHT_D = 0.5


def drone_theta(source: float) -> np.ndarray:
    """Per-axis quadratic share of the inverted light model."""
    return np.array([-(source ** 2) - 0.5 * LIGHT_D ** 2, 2.0 * source, -1.0])


def light_intensity(px, py, sx, sy, power: float = 1.0):
    return power / ((px - sx) ** 2 + (py - sy) ** 2 + LIGHT_D ** 2)


def _drone(**kw) -> Scenario:
    lights = kw.get("lights") or [(0, (2.0, 1.0)), (60, (-1.5, 2.5)), (120, (1.0, -2.0))]
    loops = []
    for axis, name in enumerate(("x", "y")):
        plant = LiftedPlant([[1.0]], [[1.0]], [[1.0]])
        cons = ConstraintSets(symmetric_box(5.0, 1), symmetric_box(0.5, 1))
        spec = RegressorSpec([(0,), (1,), (2,)])
        th = [(s, drone_theta(p[axis])) for s, p in lights]
        loops.append(Loop(f"drone-{name}", plant, cons, spec, th[0][1], symmetric_box(0.2, 1),
                          box([-30.0, -10.0, -1.5], [0.0, 10.0, -0.5]), np.array([-3.0]),
                          schedule=th[1:]))
    return Scenario("drone", loops, steps=180, controller={"s_max": 0.05}, band_floor=1.0,
                    baseline={"q_bins": 21, "q_actions": [-0.5, -0.1, 0.0, 0.1, 0.5]},
                    meta={"lights": [[int(s), list(map(float, p))] for s, p in lights], "light_d": LIGHT_D})


SCENARIOS = {"numerical": _numerical, "mppt": _mppt, "drone": _drone}

LOOP_KEYS = {"theta_star", "noise_bound", "x0", "schedule", "theta0"}


def _apply_loop(loop: Loop, ov: dict) -> Loop:
    loop = copy.copy(loop)
    if "theta_star" in ov:
        loop.theta_star = np.asarray(ov["theta_star"], float)
    if "noise_bound" in ov:
        loop.V = symmetric_box(float(ov["noise_bound"]), 1)
    if "x0" in ov:
        loop.x0 = np.asarray(ov["x0"], float)
    if "schedule" in ov:
        loop.schedule = [(int(e["step"]), np.asarray(e["theta_star"], float)) for e in ov["schedule"]]
    if "theta0" in ov:
        loop.theta0 = HPolytope.from_dict(ov["theta0"])
    return loop


def scenario(name: str, overrides: dict | None = None) -> Scenario:
    """Build a named scenario and apply overrides.

    Loop-level keys (``theta_star``, ``noise_bound``, ``x0``, ``schedule`` as
    ``{step, theta_star}`` entries, ``theta0`` as ``{H, h}``) apply to a
    single-loop scenario directly, or per loop through ``loops = [{...}, ...]``.
    Also accepted: ``steps``, ``controller`` (merged), ``irradiance`` as
    ``{step, irradiance}`` entries (mppt) and ``lights`` as
    ``{step, position}`` entries (drone).
    """
    if name not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    ov = dict(overrides or {})
    kw = {}
    if "irradiance" in ov:
        if name != "mppt":
            raise KeyError("irradiance profile only applies to the mppt scenario")
        kw["irradiance"] = [(int(e["step"]), float(e["irradiance"])) for e in ov.pop("irradiance")]
    if "lights" in ov:
        if name != "drone":
            raise KeyError("light positions only apply to the drone scenario")
        kw["lights"] = [(int(e["step"]), tuple(e["position"])) for e in ov.pop("lights")]
    sc = SCENARIOS[name](**kw)
    if "steps" in ov:
        sc.steps = int(ov.pop("steps"))
    if "controller" in ov:
        sc.controller = {**sc.controller, **ov.pop("controller")}
    loop_ov = {k: ov.pop(k) for k in list(ov) if k in LOOP_KEYS}
    per_loop = ov.pop("loops", None)
    if ov:
        raise KeyError(f"unknown scenario override(s): {sorted(ov)}")
    if loop_ov:
        if len(sc.loops) != 1:
            raise KeyError("multi-loop scenarios take loop overrides through 'loops'")
        sc.loops = [_apply_loop(sc.loops[0], loop_ov)]
    if per_loop is not None:
        if len(per_loop) != len(sc.loops):
            raise KeyError(f"'loops' needs {len(sc.loops)} entries")
        for entry in per_loop:
            bad = set(entry) - LOOP_KEYS
            if bad:
                raise KeyError(f"unknown loop override(s): {sorted(bad)}")
        sc.loops = [_apply_loop(lp, e) for lp, e in zip(sc.loops, per_loop)]
    return sc
