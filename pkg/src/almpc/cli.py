"""Command line: ``almpc run | plot | validate``."""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import AlmpcError, ConfigError, InfeasibleAbort, SchemaMismatch
from .excitation import signal_spec
from .simulator import CONTROLLERS, DesignCache, RunRecord, controller_config, metrics, run
from .svg import line_plot
from .terminal import synthesize

OUT_ENV = "ALMPC_OUT"
SUMMARY_FIELDS = ["scenario", "controller", "seed", "status", "rmse", "steps_to_band", "resets",
                  "fallbacks", "infeasible", "monotone_violations", "constraint_violations", "files"]
PLOT_KINDS = ("volume", "output", "input", "power", "rmse")


def resolve_config(arg: str) -> Path:
    """A path, or the bare name of a bundled scenario file."""
    p = Path(arg)
    if p.exists() or p.suffix:
        return p
    bundled = cfgmod.bundled_path(arg)
    return bundled if bundled.is_file() else p


def _csv_names(rec: RunRecord) -> list:
    base = f"{rec.scenario}_{rec.controller}_seed{rec.seed}"
    if rec.parts:
        return [(f"{base}_{p.loop}.csv", p) for p in rec.parts]
    return [(f"{base}.csv", rec)]


def _job(args):
    cfg, controller, seed, steps, out = args
    sc = cfg.scenario
    try:
        rec = run(sc, controller, steps=steps, seed=seed, strict=cfg.run.strict, audit=cfg.run.audit,
                  designs=DesignCache())
    except InfeasibleAbort as exc:
        return {"scenario": sc.name, "controller": controller, "seed": seed,
                "status": f"aborted: {exc}", "files": ""}
    files = []
    for name, part in _csv_names(rec):
        (out / name).write_text(part.to_csv(), newline="")
        files.append(name)
    m = metrics(rec)
    m["steps_to_band"] = "" if m["steps_to_band"] is None else m["steps_to_band"]
    return {"scenario": sc.name, "controller": controller, "seed": seed, "status": "ok",
            "files": ";".join(files), **m}


def cmd_run(ns) -> int:
    try:
        cfg = cfgmod.load(resolve_config(ns.config))
        controllers = ns.controller.split(",") if ns.controller else list(cfg.run.controllers)
        bad = [c for c in controllers if c not in CONTROLLERS]
        if bad:
            raise ConfigError(f"--controller: unknown {bad}; choose from {list(CONTROLLERS)}")
        seeds = [int(s) for s in ns.seeds.split(",")] if ns.seeds else list(cfg.run.seeds)
    except (AlmpcError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if ns.strict:
        cfg.run.strict = True
    if ns.audit:
        cfg.run.audit = True
    out = Path(ns.out or cfg.run.out or os.environ.get(OUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, c, s, ns.steps, out) for c in controllers for s in seeds]
    if ns.workers > 1:
        with ProcessPoolExecutor(ns.workers) as pool:
            rows = list(pool.map(_job, jobs))
    else:
        rows = [_job(j) for j in jobs]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    aborted = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        line = f"{r['controller']:>4} seed {r['seed']}: {r['status']}"
        if r["status"] == "ok":
            line += f"  rmse={r['rmse']:.4g} steps_to_band={r['steps_to_band']}"
        print(line)
    return 2 if aborted else 0


def _read_csv(path: Path):
    text = path.read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaMismatch(f"{path}: empty file")
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    return header, data


def _running_rmse(y, r):
    e = (y - r) ** 2
    return np.sqrt(np.cumsum(e) / np.arange(1, len(e) + 1))


def cmd_plot(ns) -> int:
    if not ns.csv:
        print("error: no CSV files given", file=sys.stderr)
        return 1
    try:
        loaded = []
        for p in map(Path, ns.csv):
            if not p.is_file():
                raise SchemaMismatch(f"CSV file not found: {p}")
            loaded.append((p, *_read_csv(p)))
        header0 = loaded[0][1]
        for p, header, _ in loaded[1:]:
            if header != header0:
                raise SchemaMismatch(f"{p}: columns differ from {loaded[0][0]}")
        if "r_star" not in header0 or "y" not in header0:
            raise SchemaMismatch(f"{loaded[0][0]}: not a run record")
    except (SchemaMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    col = {n: i for i, n in enumerate(header0)}
    series, hlines = [], []
    kind = ns.kind
    ylabel = {"volume": "parameter set volume", "output": "output y", "input": "input u",
              "power": "measurement z", "rmse": "running RMSE to optimum"}[kind]
    for p, _, d in loaded:
        k = d[:, col["k"]]
        if kind == "volume":
            y = d[:, col["volume"]]
        elif kind == "output":
            y = d[:, col["y"]]
        elif kind == "input":
            y = d[:, col["u"]]
        elif kind == "power":
            y = d[:, col["z"]]
        else:
            y = _running_rmse(d[:, col["y"]], d[:, col["r_star"]])
        series.append((p.name, k, y))
    if kind == "output":
        rs = loaded[0][2][:, col["r_star"]]
        if rs.size and np.all(rs == rs[0]):
            hlines.append(("r*", float(rs[0])))
        else:
            series.append(("r*", loaded[0][2][:, col["k"]], rs))
    svg = line_plot(series, title=ns.title or ylabel, xlabel="step k", ylabel=ylabel,
                    hlines=hlines, log_y=(kind == "volume"))
    out = Path(ns.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, newline="")
    print(f"wrote {out}")
    return 0


def cmd_validate(ns) -> int:
    path = resolve_config(ns.config)
    try:
        cfg = cfgmod.load(path)
        for lp in cfg.scenario.loops:
            c = controller_config(cfg.scenario, None, 0, False)
            Q, R, _ = c.weights(lp.plant.nx, lp.plant.nu, lp.plant.ny)
            try:
                design = synthesize(lp.plant, lp.constraints, Q, R, signal_spec(c.s_max, lp.plant))
            except AlmpcError as exc:
                raise ConfigError(f"loops[{lp.name}]: terminal synthesis failed: "
                                  f"{type(exc).__name__}: {exc}") from exc
            print(f"{lp.name}: {design.summary()}")
    except (AlmpcError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{path}: ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="almpc", description="Auto-optimizing MPC with active learning")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate closed loops and write CSVs")
    r.add_argument("config", help="scenario TOML file (or bundled name: numerical, mppt, drone)")
    r.add_argument("--controller", help=f"comma-separated subset of {','.join(CONTROLLERS)}")
    r.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    r.add_argument("--steps", type=int, help="override the number of steps")
    r.add_argument("--strict", action="store_true", help="abort a run on an infeasible solve")
    r.add_argument("--audit", action="store_true", help="certify parameter-set containment each step")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)
    p = sub.add_parser("plot", help="draw run CSVs as an SVG line plot")
    p.add_argument("csv", nargs="*")
    p.add_argument("--kind", choices=PLOT_KINDS, default="output")
    p.add_argument("--out", default="plot.svg")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)
    v = sub.add_parser("validate", help="parse a config and dry-run terminal synthesis")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
