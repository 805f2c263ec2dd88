"""Closed-loop engine, run records and metrics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .al_mpc import ALController
from .baselines import PerturbObserve, QLearning
from .environment import Environment, Loop, Scenario, optimum_map_batch
from .eo_mpc import ControllerConfig, EOController
from .errors import Infeasible, InfeasibleAbort
from .estimator import Estimator
from .excitation import signal_spec
from .plant import reachable_bounds
from .polytope import bounding_box, is_subset
from .terminal import synthesize

CONTROLLERS = ("eo", "al", "po", "qrl")
SETTLE_STEPS = 10

BASE_COLUMNS = ["k", "y", "u", "z", "r_bar", "r_star", "volume", "P_r", "beta", "J_ET", "J_ER",
                "J_offset", "trace_const", "alpha", "rs", "evaluations", "reset", "fallback",
                "feasible", "monotone", "in_Z"]


def columns_for(loop: Loop) -> list:
    return (BASE_COLUMNS + [f"theta_bar_{j}" for j in range(loop.spec.p)]
            + [f"x_{j}" for j in range(loop.plant.nx)])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return "nan"
    return repr(f)


@dataclass
class RunRecord:
    scenario: str
    controller: str
    seed: int
    loop: str
    columns: list
    rows: list = field(default_factory=list)
    band_frac: float = 0.05
    band_floor: float = 0.0
    parts: list = field(default_factory=list)  # per-loop records of multi-loop runs

    def column(self, name: str) -> np.ndarray:
        if self.parts:
            raise ValueError("multi-loop record: read columns from its parts")
        j = self.columns.index(name)
        return np.array([float(r[j]) for r in self.rows])

    def to_csv(self) -> str:
        if self.parts:
            raise ValueError("multi-loop record: write each part separately")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **meta) -> "RunRecord":
        rd = list(csv.reader(io.StringIO(text)))
        if not rd:
            raise ValueError("empty CSV")
        rows = [[float(v) for v in r] for r in rd[1:] if r]
        return cls(meta.get("scenario", ""), meta.get("controller", ""), meta.get("seed", 0),
                   meta.get("loop", ""), rd[0], rows, meta.get("band_frac", 0.05),
                   meta.get("band_floor", 0.0))

    def summary(self) -> dict:
        return metrics(self)


def rmse(y, r) -> float:
    d = np.asarray(y, float) - np.asarray(r, float)
    return float(np.sqrt(np.mean(d * d))) if d.size else float("nan")


def steps_to_band(y, r, frac: float = 0.05, floor: float = 0.0, hold: int = SETTLE_STEPS):
    """First step from which ``|y - r*| <= frac * max(|r*|, floor)`` holds ``hold`` steps."""
    y = np.asarray(y, float)
    r = np.asarray(r, float)
    inside = np.abs(y - r) <= frac * np.maximum(np.abs(r), floor)
    run = 0
    for k in range(len(y) - 1, -1, -1):
        run = run + 1 if inside[k] else 0
        inside[k] = run >= hold
    hits = np.flatnonzero(inside)
    return int(hits[0]) if hits.size else None


def metrics(record: RunRecord) -> dict:
    """RMSE to the optimum, settling step and event counts."""
    if record.parts:
        subs = [metrics(p) for p in record.parts]
        stb = [s["steps_to_band"] for s in subs]
        return {
            "rmse": float(np.mean([s["rmse"] for s in subs])),
            "steps_to_band": None if any(v is None for v in stb) else max(stb),
            "resets": sum(s["resets"] for s in subs),
            "fallbacks": sum(s["fallbacks"] for s in subs),
            "infeasible": sum(s["infeasible"] for s in subs),
            "monotone_violations": sum(s["monotone_violations"] for s in subs),
            "constraint_violations": sum(s["constraint_violations"] for s in subs),
        }
    if not record.rows:
        return {"rmse": float("nan"), "steps_to_band": None, "resets": 0, "fallbacks": 0,
                "infeasible": 0, "monotone_violations": 0, "constraint_violations": 0}
    col = record.column
    y, r = col("y"), col("r_star")

    def count(name, value=1.0):
        return int(np.sum(col(name) == value)) if name in record.columns else 0

    return {
        "rmse": rmse(y, r),
        "steps_to_band": steps_to_band(y, r, record.band_frac, record.band_floor),
        "resets": count("reset"),
        "fallbacks": count("fallback"),
        "infeasible": count("feasible", 0.0),
        "monotone_violations": count("monotone", 0.0),
        "constraint_violations": count("in_Z", 0.0),
    }


# ---------------------------------------------------------------------------
# engine


class DesignCache:
    """Terminal designs keyed by loop and weights (synthesis is seed independent)."""

    def __init__(self):
        self._store = {}

    def get(self, loop: Loop, cfg: ControllerConfig):
        Q, R, _ = cfg.weights(loop.plant.nx, loop.plant.nu, loop.plant.ny)
        key = (loop.name, loop.plant.A.tobytes(), loop.plant.B.tobytes(), Q.tobytes(),
               R.tobytes(), float(cfg.s_max), loop.constraints.X.h.tobytes(),
               loop.constraints.U.h.tobytes())
        if key not in self._store:
            self._store[key] = synthesize(loop.plant, loop.constraints, Q, R,
                                          signal_spec(cfg.s_max, loop.plant))
        return self._store[key]


def controller_config(sc: Scenario, overrides: dict | None, seed: int, strict: bool) -> ControllerConfig:
    merged = {**sc.controller, **(overrides or {})}
    merged["seed"] = seed
    merged["strict"] = strict
    return ControllerConfig(**merged)


def _run_loop(sc: Scenario, idx: int, kind: str, steps: int, seed: int,
              overrides: dict | None, strict: bool, audit: bool,
              designs: DesignCache) -> RunRecord:
    loop = sc.loops[idx]
    plant, cons = loop.plant, loop.constraints
    env = Environment(loop.spec, loop.theta_star, loop.V, seed=[seed, idx, 0])
    y_lo, y_hi = loop.output_box()
    u_lo, u_hi = bounding_box(cons.U)
    x_lo, x_hi = bounding_box(cons.X)
    cols = columns_for(loop)
    rec = RunRecord(sc.name, kind, seed, loop.name, cols, band_frac=sc.band_frac,
                    band_floor=sc.band_floor)
    nan = float("nan")
    est = ctl = None
    if kind in ("eo", "al"):
        cfg = controller_config(sc, overrides, seed, strict)
        design = designs.get(loop, cfg)
        est = Estimator(plant, cons, loop.spec, loop.V, loop.theta0, samples=cfg.M,
                        seed=[seed, idx, 1])
        if kind == "eo":
            ctl = EOController(plant, cons, design, loop.spec, cfg)
        else:
            ctl = ALController(plant, cons, design, loop.spec, loop.V, cfg)
    elif kind == "po":
        step = float((overrides or {}).get("po_step", sc.baseline.get("po_step", 0.1 * (u_hi[0] - u_lo[0]))))
        ctl = PerturbObserve(step, (u_lo[0], u_hi[0]))
    elif kind == "qrl":
        b = {**sc.baseline, **(overrides or {})}
        r_lo, r_hi = reachable_bounds(plant, cons)
        ctl = QLearning((r_lo[0], r_hi[0]), int(b.get("q_bins", 20)),
                        b.get("q_actions", [u_lo[0], 0.0, u_hi[0]]),
                        float(b.get("q_alpha", 0.5)), float(b.get("q_gamma", 0.8)),
                        float(b.get("q_epsilon", 0.1)), rng=np.random.default_rng([seed, idx, 2]))
    else:
        raise ValueError(f"unknown controller {kind!r}; choose from {CONTROLLERS}")

    x = np.asarray(loop.x0, float).copy()
    prev = None
    u_prev = None
    theta_prev = None
    r_star = nan
    for k in range(steps):
        th = loop.theta_at(k)
        env.theta_star = th
        if theta_prev is None or not np.array_equal(th, theta_prev):
            r_star = float(optimum_map_batch(loop.spec, th[None, :], y_lo, y_hi)[0, 0])
            theta_prev = th
        y = plant.output(x)
        z = env.measure(y)
        vals = dict.fromkeys(BASE_COLUMNS, nan)
        vals.update(reset=0, fallback=0, feasible=1, monotone=1, evaluations=0)
        if est is not None:
            old = est.estimate.theta_set
            e = est.update(y, z, u_prev)
            if audit and e.changed and not e.reset:
                vals["monotone"] = int(is_subset(e.theta_set, old))
            try:
                sol = ctl.solve(x, e, prev)
            except Infeasible as exc:
                raise InfeasibleAbort(f"{sc.name}/{loop.name} {kind} seed {seed} step {k}: {exc}") from exc
            prev = sol
            u = ctl.apply(sol)
            vals.update(r_bar=e.r_bar, volume=e.volume, P_r=e.P_r, beta=sol.beta, J_ET=sol.J_ET,
                        J_ER=sol.J_ER, J_offset=sol.J_offset, trace_const=sol.trace_const,
                        alpha=sol.alpha, rs=sol.rs, evaluations=sol.evaluations,
                        reset=int(e.reset), fallback=int(sol.fallback), feasible=int(sol.feasible))
            theta_bar = e.theta_bar
        else:
            if kind == "po":
                uu = ctl.act(float(z))
            else:
                uu = ctl.act(float(y[0]), float(z))
            u = np.array([uu])
            # physical saturation: keep the (integrator) state inside X
            if plant.nx == 1 and abs(plant.A[0, 0] - 1.0) < 1e-12 and plant.B[0, 0] > 0:
                u = np.clip(u, (x_lo - x) / plant.B[0, 0], (x_hi - x) / plant.B[0, 0])
            u = np.clip(u, u_lo, u_hi)
            theta_bar = np.full(loop.spec.p, nan)
        vals.update(k=k, y=float(y[0]), u=float(u[0]), z=float(z), r_star=r_star,
                    in_Z=int(cons.contains(x, u)))
        rec.rows.append([vals[c] for c in BASE_COLUMNS] + list(map(float, theta_bar)) + list(map(float, x)))
        x = plant.step(x, u)
        u_prev = u
    return rec


def run(sc: Scenario, controller: str, steps: int | None = None, seed: int = 0,
        overrides: dict | None = None, strict: bool = False, audit: bool = False,
        designs: DesignCache | None = None) -> RunRecord:
    """Simulate ``controller`` on every loop of ``sc``; deterministic given ``seed``."""
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}; choose from {CONTROLLERS}")
    steps = sc.steps if steps is None else int(steps)
    designs = designs or DesignCache()
    parts = [_run_loop(sc, i, controller, steps, seed, overrides, strict, audit, designs)
             for i in range(len(sc.loops))]
    if len(parts) == 1:
        return parts[0]
    return RunRecord(sc.name, controller, seed, "+".join(p.loop for p in parts), [],
                     band_frac=sc.band_frac, band_floor=sc.band_floor, parts=parts)
