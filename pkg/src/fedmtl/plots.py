"""Minimal deterministic SVG line charts (fixed 800x600 canvas)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    dashed: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e4 or abs(v) < 1e-2):
        return f"{v:.0e}"
    return f"{v:.3g}"


def line_plot(
    series: Sequence[Series],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    logy: bool = False,
    xlim: tuple[float, float] | None = None,
    ylim: tuple[float, float] | None = None,
    square: bool = False,
) -> str:
    left, right, top, bottom = 80, 30, 50, 70
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    if square:
        pw = ph = min(pw, ph)

    def finite(s):
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
        return x[keep], y[keep]

    data = [finite(s) for s in series]
    xs = np.concatenate([d[0] for d in data]) if data else np.zeros(1)
    ys = np.concatenate([d[1] for d in data]) if data else np.ones(1)
    if xs.size == 0:
        xs, ys = np.zeros(1), np.ones(1)
    x0, x1 = xlim if xlim else (float(xs.min()), float(xs.max()))
    if ylim:
        y0, y1 = ylim
    else:
        y0, y1 = float(ys.min()), float(ys.max())
    if logy:
        y0, y1 = math.floor(math.log10(y0)), math.ceil(math.log10(y1))
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        v = math.log10(v) if logy else v
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.0f}" y="30" text-anchor="middle" font-size="18">{escape(title)}</text>')
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_fmt(px(t))}" y1="{top + ph}" x2="{_fmt(px(t))}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{top + ph + 20}" text-anchor="middle" font-size="12">{_label(t)}</text>')
    yt = [float(k) for k in range(int(y0), int(y1) + 1)] if logy else _ticks(y0, y1)
    for t in yt:
        yy = top + ph - (t - y0) / (y1 - y0) * ph
        lab = f"1e{int(t)}" if logy else _label(t)
        out.append(f'<line x1="{left - 5}" y1="{_fmt(yy)}" x2="{left}" y2="{_fmt(yy)}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_fmt(yy + 4)}" text-anchor="end" font-size="12">{lab}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{HEIGHT - 20}" text-anchor="middle" font-size="14">{escape(xlabel)}</text>')
    out.append(
        f'<text x="20" y="{top + ph / 2:.0f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 20 {top + ph / 2:.0f})">{escape(ylabel)}</text>'
    )
    for k, (s, (x, y)) in enumerate(zip(series, data)):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
        ly = top + 20 + 18 * k
        lx = left + pw - 190
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}" font-size="12">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
