"""Minimal static SVG charts: ARI-versus-p line plots and criterion box plots."""
from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=60, right=110, top=30, bottom=50)
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79")


class _Frame:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def x(self, v):
        span = (self.x1 - self.x0) or 1.0
        return MARGIN["left"] + (v - self.x0) / span * self.w

    def y(self, v):
        span = (self.y1 - self.y0) or 1.0
        return MARGIN["top"] + self.h - (v - self.y0) / span * self.h


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12:
        out.append(round(v, 10))
        v += step
    return out


def _axes(f: _Frame, title, xlabel, ylabel, xticks=None, xticklabels=None):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    left, bottom = MARGIN["left"], MARGIN["top"] + f.h
    parts.append(f'<line x1="{left}" y1="{bottom}" x2="{left + f.w}" y2="{bottom}" stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{MARGIN["top"]}" x2="{left}" y2="{bottom}" stroke="black"/>')
    for v in _ticks(f.y0, f.y1):
        y = f.y(v)
        parts.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{v:g}</text>')
    xticks = xticks if xticks is not None else _ticks(f.x0, f.x1)
    labels = xticklabels or [f"{v:g}" for v in xticks]
    for v, lab in zip(xticks, labels):
        x = f.x(v)
        parts.append(f'<line x1="{x:.1f}" y1="{bottom}" x2="{x:.1f}" y2="{bottom + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{bottom + 16}" text-anchor="middle">{escape(lab)}</text>')
    parts.append(f'<text x="{left + f.w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text transform="translate(16 {MARGIN["top"] + f.h / 2:.1f}) rotate(-90)" '
                 f'text-anchor="middle">{escape(ylabel)}</text>')
    return parts


def line_plot(series: Mapping[str, Sequence[tuple]], title: str = "", xlabel: str = "p",
              ylabel: str = "mean ARI", band: Sequence[tuple] | None = None) -> str:
    """One polyline per series of ``(x, y)`` points.

    ``band`` holds ``(x, mean, sd)`` triples drawn as shaded one- and
    two-standard-deviation envelopes behind the lines.
    """
    pts = [pt for s in series.values() for pt in s if math.isfinite(pt[1])]
    xs = [x for x, _ in pts] or [0.0, 1.0]
    ys = [y for _, y in pts] or [0.0, 1.0]
    if band:
        ys += [m + 2 * s for _, m, s in band if math.isfinite(s)]
        ys += [m - 2 * s for _, m, s in band if math.isfinite(s)]
    f = _Frame((min(xs), max(xs)), (min(min(ys), 0.0), max(max(ys), 1.0)))
    parts = _axes(f, title, xlabel, ylabel)
    if band:
        for k, shade in ((2, "#e0e0e0"), (1, "#b0b0b0")):
            ok = [(x, m, s) for x, m, s in band if math.isfinite(s)]
            if len(ok) < 2:
                continue
            upper = [f"{f.x(x):.1f},{f.y(m + k * s):.1f}" for x, m, s in ok]
            lower = [f"{f.x(x):.1f},{f.y(m - k * s):.1f}" for x, m, s in reversed(ok)]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" fill="{shade}" stroke="none"/>')
    for i, (name, s) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        good = [(x, y) for x, y in s if math.isfinite(y)]
        if good:
            pts_s = " ".join(f"{f.x(x):.1f},{f.y(y):.1f}" for x, y in good)
            parts.append(f'<polyline points="{pts_s}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 14 * i + 8
        lx = WIDTH - MARGIN["right"] + 10
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 16}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 20}" y="{ly + 4}">{escape(str(name))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _quantile(sorted_vals, q):
    n = len(sorted_vals)
    pos = q * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * (pos - lo)


def box_plot(groups: Mapping[str, Sequence[float]], title: str = "", ylabel: str = "ARI") -> str:
    """Tukey box plots (quartiles, 1.5 IQR whiskers, outlier dots) per named group."""
    names = list(groups)
    clean = {k: sorted(v for v in groups[k] if math.isfinite(v)) for k in names}
    allv = [v for vals in clean.values() for v in vals] or [0.0, 1.0]
    lo, hi = min(allv), max(allv)
    pad = 0.05 * ((hi - lo) or 1.0)
    f = _Frame((0.5, len(names) + 0.5), (lo - pad, hi + pad))
    parts = _axes(f, title, "", ylabel, xticks=list(range(1, len(names) + 1)), xticklabels=names)
    half = 0.3 * f.w / max(len(names), 1) / 2
    for i, name in enumerate(names, start=1):
        vals = clean[name]
        if not vals:
            continue
        q1, med, q3 = (_quantile(vals, q) for q in (0.25, 0.5, 0.75))
        iqr = q3 - q1
        inside = [v for v in vals if q1 - 1.5 * iqr <= v <= q3 + 1.5 * iqr]
        wlo, whi = min(inside), max(inside)
        cx = f.x(i)
        parts.append(f'<line x1="{cx:.1f}" y1="{f.y(wlo):.1f}" x2="{cx:.1f}" y2="{f.y(whi):.1f}" stroke="black"/>')
        parts.append(f'<rect x="{cx - half:.1f}" y="{f.y(q3):.1f}" width="{2 * half:.1f}" '
                     f'height="{max(f.y(q1) - f.y(q3), 0.5):.1f}" fill="#9ecae1" stroke="black"/>')
        parts.append(f'<line x1="{cx - half:.1f}" y1="{f.y(med):.1f}" x2="{cx + half:.1f}" '
                     f'y2="{f.y(med):.1f}" stroke="black" stroke-width="2"/>')
        for v in vals:
            if v < wlo or v > whi:
                parts.append(f'<circle cx="{cx:.1f}" cy="{f.y(v):.1f}" r="2.5" fill="none" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
