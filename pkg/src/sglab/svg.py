"""Minimal standalone SVG plots: 1D density curves and 2D scatter/heatmap panels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PALETTE = ("#1f5fbf", "#2a9d3a", "#c8312b", "#8a4fbf", "#d08a1a", "#444444")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


@dataclass
class Panel:
    x: float
    y: float
    w: float
    h: float
    xlim: tuple
    ylim: tuple

    def px(self, xs):
        lo, hi = self.xlim
        return self.x + (np.asarray(xs, dtype=float) - lo) / (hi - lo) * self.w

    def py(self, ys):
        lo, hi = self.ylim
        return self.y + self.h - (np.asarray(ys, dtype=float) - lo) / (hi - lo) * self.h


@dataclass
class Canvas:
    width: int
    height: int
    parts: list = field(default_factory=list)

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="middle"):
        s = str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{s}</text>')

    def frame(self, p: Panel, title="", xlabel="", ylabel=""):
        self.add(f'<rect x="{_fmt(p.x)}" y="{_fmt(p.y)}" width="{_fmt(p.w)}" height="{_fmt(p.h)}" fill="none" stroke="#000" stroke-width="0.8"/>')
        for v in np.linspace(*p.xlim, 5):
            self.text(float(p.px(v)), p.y + p.h + 14, _fmt(v), size=9)
        for v in np.linspace(*p.ylim, 5):
            self.text(p.x - 4, float(p.py(v)) + 3, _fmt(v), size=9, anchor="end")
        if title:
            self.text(p.x + p.w / 2, p.y - 6, title, size=12)
        if xlabel:
            self.text(p.x + p.w / 2, p.y + p.h + 28, xlabel, size=10)
        if ylabel:
            self.text(p.x - 30, p.y + p.h / 2, ylabel, size=10)

    def polyline(self, p: Panel, xs, ys, color, width=1.4):
        ys = np.clip(ys, *p.ylim)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(p.px(xs), p.py(ys)))
        self.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def render(self) -> str:
        head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
        body = '<rect width="100%" height="100%" fill="#fff"/>\n' + "\n".join(self.parts)
        return head + body + "\n</svg>\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())


def line_plot(xs, series: dict, title="", xlabel="x", ylabel="density", xlim=None, ylim=None) -> Canvas:
    """One panel of curves; ``series`` maps legend label to y values over ``xs``."""
    xs = np.asarray(xs, dtype=float)
    ymax = max((float(np.max(y)) for y in series.values()), default=1.0)
    c = Canvas(560, 360)
    p = Panel(60, 30, 440, 270, xlim or (float(xs[0]), float(xs[-1])), ylim or (0.0, 1.05 * ymax if ymax > 0 else 1.0))
    c.frame(p, title, xlabel, ylabel)
    for i, (label, ys) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        c.polyline(p, xs, ys, color)
        ly = p.y + 14 + 14 * i
        c.add(f'<line x1="{_fmt(p.x + p.w - 90)}" y1="{_fmt(ly - 4)}" x2="{_fmt(p.x + p.w - 72)}" y2="{_fmt(ly - 4)}" stroke="{color}" stroke-width="2"/>')
        c.text(p.x + p.w - 68, ly, label, size=10, anchor="start")
    return c


def scatter_panels(panels: list, box=(-3.0, 3.0), heat_bins=40) -> Canvas:
    """Row of panels, each a (title, samples, reference) triple.

    A grey heatmap of the sample histogram sits under the scatter; the
    reference points (e.g. the data manifold) are drawn as a thin trace.
    """
    size, gap = 220, 40
    c = Canvas(gap + len(panels) * (size + gap), size + 80)
    edges = np.linspace(box[0], box[1], heat_bins + 1)
    cell = size / heat_bins
    for i, (title, samples, ref) in enumerate(panels):
        p = Panel(gap + i * (size + gap), 30, size, size, box, box)
        samples = np.asarray(samples, dtype=float).reshape(-1, 2)
        hist, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=[edges, edges])
        peak = hist.max()
        if peak > 0:
            for a, b in zip(*np.nonzero(hist)):
                shade = int(255 - 180 * hist[a, b] / peak)
                c.add(f'<rect x="{_fmt(p.x + a * cell)}" y="{_fmt(p.y + size - (b + 1) * cell)}" width="{_fmt(cell)}" height="{_fmt(cell)}" fill="rgb({shade},{shade},{shade})"/>')
        if ref is not None:
            ref = np.asarray(ref, dtype=float)
            c.add(f'<g fill="{PALETTE[1]}">' + "".join(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="0.5"/>' for x, y in zip(p.px(ref[:, 0]), p.py(ref[:, 1]))) + "</g>")
        inside = samples[np.all((samples > box[0]) & (samples < box[1]), axis=1)][:1500]
        c.add(f'<g fill="{PALETTE[0]}" fill-opacity="0.5">' + "".join(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="1"/>' for x, y in zip(p.px(inside[:, 0]), p.py(inside[:, 1]))) + "</g>")
        c.frame(p, title)
    return c
