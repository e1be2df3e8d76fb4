"""Minimal SVG line/point charts of study metrics, one file per metric."""
from __future__ import annotations

import math
from typing import Dict, List, Sequence
from xml.sax.saxutils import escape

from .harness import MetricsRow

PLOT_METRICS = ("bias", "var", "mse", "coverage", "prob_optimal")
COLORS = {
    "separate": "#1f77b4", "pooling": "#ff7f0e", "BIGweak": "#2ca02c",
    "BIGlogdis": "#d62728", "BIGcomP": "#9467bd", "BIGcommP": "#8c564b",
}
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 70


def _nice_range(values: Sequence[float]):
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if lo == hi:
        pad = abs(lo) * 0.1 or 0.5
        return lo - pad, hi + pad
    pad = 0.08 * (hi - lo)
    return lo - pad, hi + pad


def _label(row: MetricsRow, multi_n: bool, multi_r: bool) -> str:
    parts = [row.scenario]
    if multi_n:
        parts.append(f"n={row.n}")
    if multi_r:
        parts.append(f"r={row.r:g}")
    return " ".join(parts)


def metric_svg(rows: Sequence[MetricsRow], metric: str) -> str:
    """Chart of ``metric`` across grid cells with one series per approach."""
    multi_n = len({r.n for r in rows}) > 1
    multi_r = len({r.r for r in rows}) > 1
    cells: List[str] = []
    for r in rows:
        lab = _label(r, multi_n, multi_r)
        if lab not in cells:
            cells.append(lab)
    series: Dict[str, Dict[str, float]] = {}
    for r in rows:
        series.setdefault(r.approach, {})[_label(r, multi_n, multi_r)] = float(getattr(r, metric))
    lo, hi = _nice_range([v for s in series.values() for v in s.values()])
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def x_of(i):
        return LEFT + (pw * (i + 0.5) / len(cells) if cells else pw / 2)

    def y_of(v):
        return TOP + ph * (1 - (v - lo) / (hi - lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<title>{escape(metric)}</title>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(metric)}</text>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = y_of(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.1f}" x2="{LEFT + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{v:.3g}</text>')
    for i, c in enumerate(cells):
        out.append(f'<text x="{x_of(i):.1f}" y="{TOP + ph + 18}" text-anchor="middle" font-size="11">'
                   f'{escape(c)}</text>')
    if lo < 0 < hi and metric == "bias":
        out.append(f'<line x1="{LEFT}" y1="{y_of(0):.1f}" x2="{LEFT + pw}" y2="{y_of(0):.1f}" '
                   f'stroke="#888" stroke-dasharray="4 3"/>')
    for si, (approach, vals) in enumerate(series.items()):
        color = COLORS.get(approach, "#333")
        pts = [(x_of(i), y_of(vals[c])) for i, c in enumerate(cells) if c in vals and math.isfinite(vals[c])]
        out.append(f'<g class="series" data-approach="{escape(approach)}" stroke="{color}" fill="{color}">')
        if len(pts) > 1:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke-width="1.5"/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4"/>')
        ly = TOP + 14 + 18 * si
        out.append(f'<circle cx="{LEFT + pw + 16}" cy="{ly - 4}" r="4"/>')
        out.append(f'<text x="{LEFT + pw + 26}" y="{ly}" font-size="12" stroke="none" fill="#000">'
                   f'{escape(approach)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
