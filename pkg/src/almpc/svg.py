"""Deterministic line-plot SVG writer (fixed canvas, linear axes)."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
MARGIN = dict(left=80, right=30, top=40, bottom=70)
TICKS = 6
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


def _num(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v == 0 or 1e-3 <= abs(v) < 1e5:
        return f"{v:.4g}"
    return f"{v:.2e}"


def _range(values):
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 1.0
    lo, hi = float(finite.min()), float(finite.max())
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "",
              hlines=(), log_y: bool = False) -> str:
    """``series`` is a list of ``(label, x, y)``; ``hlines`` of ``(label, value)``."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = [np.asarray(s[2], float) for s in series]
    if log_y:
        ys = [np.where(y > 0, np.log10(np.where(y > 0, y, 1.0)), np.nan) for y in ys]
    ally = np.concatenate(ys + [np.array([h[1] for h in hlines], float)]) if ys or hlines else np.zeros(1)
    x0, x1 = _range(xs)
    y0, y1 = _range(ally)
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="black"/>']
    for i in range(TICKS):
        t = i / (TICKS - 1)
        xv, yv = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        px, py = sx(xv), sy(yv)
        ylab = _tick_label(10 ** yv) if log_y else _tick_label(yv)
        out.append(f'<line x1="{_num(px)}" y1="{HEIGHT - MARGIN["bottom"]}" x2="{_num(px)}" '
                   f'y2="{HEIGHT - MARGIN["bottom"] + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(px)}" y="{HEIGHT - MARGIN["bottom"] + 20}" font-size="12" '
                   f'text-anchor="middle">{escape(_tick_label(xv))}</text>')
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_num(py)}" x2="{MARGIN["left"]}" '
                   f'y2="{_num(py)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_num(py + 4)}" font-size="12" '
                   f'text-anchor="end">{escape(ylab)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="24" font-size="16" text-anchor="middle">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{MARGIN["left"] + pw / 2:.0f}" y="{HEIGHT - 20}" font-size="14" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        cy = MARGIN["top"] + ph / 2
        out.append(f'<text x="20" y="{cy:.0f}" font-size="14" text-anchor="middle" '
                   f'transform="rotate(-90 20 {cy:.0f})">{escape(ylabel)}</text>')
    for label, v in hlines:
        vv = math.log10(v) if log_y and v > 0 else v
        py = _num(sy(vv))
        out.append(f'<line x1="{MARGIN["left"]}" y1="{py}" x2="{WIDTH - MARGIN["right"]}" y2="{py}" '
                   f'stroke="gray" stroke-dasharray="6 4"><title>{escape(label)}</title></line>')
    for i, ((label, x, _), y) in enumerate(zip(series, ys)):
        color = PALETTE[i % len(PALETTE)]
        x = np.asarray(x, float)
        pts = [f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(x, y) if np.isfinite(a) and np.isfinite(b)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        ly = MARGIN["top"] + 16 + 18 * i
        lx = WIDTH - MARGIN["right"] - 220
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 30}" y="{ly}" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
