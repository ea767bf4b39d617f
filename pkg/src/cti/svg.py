"""Minimal SVG line and band plots.

Just enough to eyeball variance-ratio curves and integrand bands without a
plotting dependency.  The CSV files written next to the figures are the
actual outputs; these are conveniences.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


class Figure:
    """A single axes with a linear x axis and a linear or log10 y axis."""

    def __init__(self, title="", xlabel="", ylabel="", width=640, height=420, logy=False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.width = width
        self.height = height
        self.logy = logy
        self.margin = (70, 20, 40, 50)  # left, right, top, bottom
        self._series = []

    def line(self, x, y, label=None, color=None):
        self._series.append(("line", np.asarray(x, float), np.asarray(y, float), None, label, color))
        return self

    def band(self, x, lo, hi, label=None, color=None):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        self._series.append(("band", np.asarray(x, float), lo, hi, label, color))
        return self

    def _ty(self, y):
        if not self.logy:
            return y
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log10(np.where(y > 0, y, np.nan))

    def _limits(self):
        xs, ys = [], []
        for kind, x, a, b, _, _ in self._series:
            xs.append(x)
            ys.append(self._ty(a))
            if b is not None:
                ys.append(self._ty(b))
        x = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        y = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        x, y = x[np.isfinite(x)], y[np.isfinite(y)]
        if x.size == 0:
            x = np.array([0.0, 1.0])
        if y.size == 0:
            y = np.array([0.0, 1.0])
        x0, x1 = float(x.min()), float(x.max())
        y0, y1 = float(y.min()), float(y.max())
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self):
        left, right, top, bottom = self.margin
        w, h = self.width, self.height
        pw, ph = w - left - right, h - top - bottom
        x0, x1, y0, y1 = self._limits()

        def px(x):
            return left + (x - x0) / (x1 - x0) * pw

        def py(y):
            return top + (1.0 - (y - y0) / (y1 - y0)) * ph

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        ]
        for tick in _ticks(x0, x1):
            X = px(tick)
            out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{X:.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(tick)}</text>')
        for tick in _ticks(y0, y1):
            Y = py(tick)
            label = f"1e{_fmt(tick)}" if self.logy else _fmt(tick)
            out.append(f'<line x1="{left - 4}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" stroke="black"/>')
            out.append(f'<text x="{left - 6}" y="{Y + 4:.2f}" text-anchor="end">{label}</text>')

        legend = []
        for k, (kind, x, a, b, label, color) in enumerate(self._series):
            color = color or PALETTE[k % len(PALETTE)]
            if kind == "band":
                ya, yb = self._ty(a), self._ty(b)
                keep = np.isfinite(x) & np.isfinite(ya) & np.isfinite(yb)
                if keep.sum() >= 2:
                    upper = [f"{px(u):.2f},{py(v):.2f}" for u, v in zip(x[keep], yb[keep])]
                    lower = [f"{px(u):.2f},{py(v):.2f}" for u, v in zip(x[keep][::-1], ya[keep][::-1])]
                    out.append(
                        f'<polygon points="{" ".join(upper + lower)}" fill="{color}" '
                        f'fill-opacity="0.25" stroke="none"/>'
                    )
            else:
                ya = self._ty(a)
                for seg in _segments(x, ya):
                    pts = " ".join(f"{px(u):.2f},{py(v):.2f}" for u, v in seg)
                    out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
            if label:
                legend.append((label, color))
        for k, (label, color) in enumerate(legend):
            Y = top + 14 + 14 * k
            out.append(f'<line x1="{left + pw - 120}" y1="{Y - 4}" x2="{left + pw - 100}" y2="{Y - 4}" stroke="{color}" stroke-width="3"/>')
            out.append(f'<text x="{left + pw - 95}" y="{Y}">{escape(label)}</text>')
        if self.title:
            out.append(f'<text x="{w / 2:.1f}" y="{top - 14}" text-anchor="middle" font-size="13">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{left + pw / 2:.1f}" y="{h - 10}" text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            out.append(
                f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
                f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(self.ylabel)}</text>'
            )
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def _segments(x, y):
    """Split a polyline at non-finite values."""
    seg = []
    for u, v in zip(x, y):
        if np.isfinite(u) and np.isfinite(v):
            seg.append((u, v))
        elif seg:
            yield seg
            seg = []
    if len(seg) >= 1:
        yield seg


def _ticks(lo, hi, target=6):
    span = hi - lo
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10)), key=lambda s: abs(span / s - target))
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _fmt(v):
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"
