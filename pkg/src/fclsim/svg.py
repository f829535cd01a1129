"""Minimal standalone SVG line charts."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

from .errors import InputError

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 30, 50


def _num(v: float) -> str:
    return f"{v:.2f}"


def render_svg(
    series: Mapping[str, Sequence[float]], title: str = "", xlabel: str = "round", ylabel: str = ""
) -> str:
    if not series:
        raise InputError("need at least one series")
    lengths = {len(v) for v in series.values()}
    if len(lengths) != 1:
        raise InputError(f"series lengths differ: {sorted(lengths)}")
    n = lengths.pop()
    if n == 0:
        raise InputError("series are empty")
    values = [float(v) for s in series.values() for v in s]
    if not all(math.isfinite(v) for v in values):
        raise InputError("series contain non-finite values")
    lo, hi = min(values), max(values)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(i: int) -> float:
        return LEFT + (pw * i / (n - 1) if n > 1 else pw / 2)

    def sy(v: float) -> float:
        return TOP + ph * (hi - v) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2 - RIGHT / 2:.2f}" y="18" text-anchor="middle">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
        f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        out.append(f'<text x="{LEFT - 6}" y="{_num(sy(v) + 4)}" text-anchor="end">{v:.3g}</text>')
    out.append(f'<text x="{LEFT}" y="{TOP + ph + 16}" text-anchor="middle">1</text>')
    out.append(f'<text x="{LEFT + pw}" y="{TOP + ph + 16}" text-anchor="middle">{n}</text>')
    for k, (name, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_num(sx(i))},{_num(sy(float(v)))}" for i, v in enumerate(s))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = TOP + 14 * k + 6
        lx = LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg(series: Mapping[str, Sequence[float]], path: str | Path, **labels: str) -> Path:
    path = Path(path)
    path.write_text(render_svg(series, **labels))
    return path
