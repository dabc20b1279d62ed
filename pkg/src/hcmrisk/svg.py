"""Minimal hand-written SVG plots (line, band, histogram, scatter) for the report figures."""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _f(v: float) -> str:
    return f"{v:.2f}"


@dataclass
class Panel:
    """One plotting area inside a figure; data coordinates map onto a pixel box."""

    x0: float
    y0: float
    width: float
    height: float
    xlim: tuple[float, float] = (0.0, 1.0)
    ylim: tuple[float, float] = (0.0, 1.0)
    parts: list[str] = field(default_factory=list)

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - lo) / ((hi - lo) or 1.0) * self.width

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.height - (np.asarray(y, dtype=float) - lo) / ((hi - lo) or 1.0) * self.height

    def line(self, x, y, color="#000", width=1.5, dash: str | None = None, step: bool = False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if step and x.size > 1:
            x = np.repeat(x, 2)[1:]
            y = np.repeat(y, 2)[:-1]
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(x), self.py(y)))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>')

    def band(self, x, lo, hi, color="#000", opacity=0.15):
        x = np.asarray(x, dtype=float)
        xs = np.r_[x, x[::-1]]
        ys = np.r_[np.asarray(hi, float), np.asarray(lo, float)[::-1]]
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(self.px(xs), self.py(ys)))
        self.parts.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>')

    def bars(self, edges, heights, color="#000", opacity=0.5):
        for a, b, h in zip(edges[:-1], edges[1:], heights):
            x, w = float(self.px(a)), float(self.px(b) - self.px(a))
            y = float(self.py(h))
            self.parts.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(self.py(self.ylim[0]) - y)}" '
                              f'fill="{color}" fill-opacity="{opacity}"/>')

    def points(self, x, y, colors, r=2.0):
        if isinstance(colors, str):
            colors = [colors] * len(x)
        for a, b, c in zip(self.px(x), self.py(y), colors):
            self.parts.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="{r}" fill="{c}"/>')

    def text(self, x, y, s, size=11, anchor="start", data=True, color="#000"):
        if data:
            x, y = float(self.px(x)), float(self.py(y))
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                          f'fill="{color}">{escape(s)}</text>')

    def axes(self, xlabel="", ylabel="", title="", ticks=5):
        b = self.y0 + self.height
        self.parts.append(f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.width)}" '
                          f'height="{_f(self.height)}" fill="none" stroke="#444"/>')
        for v in np.linspace(*self.xlim, ticks + 1):
            x = float(self.px(v))
            self.parts.append(f'<line x1="{_f(x)}" y1="{_f(b)}" x2="{_f(x)}" y2="{_f(b + 4)}" stroke="#444"/>')
            self.text(x, b + 16, f"{v:.3g}", 10, "middle", data=False)
        for v in np.linspace(*self.ylim, ticks + 1):
            y = float(self.py(v))
            self.parts.append(f'<line x1="{_f(self.x0 - 4)}" y1="{_f(y)}" x2="{_f(self.x0)}" y2="{_f(y)}" stroke="#444"/>')
            self.text(self.x0 - 6, y + 3, f"{v:.3g}", 10, "end", data=False)
        if xlabel:
            self.text(self.x0 + self.width / 2, b + 32, xlabel, 11, "middle", data=False)
        if ylabel:
            cx, cy = self.x0 - 40, self.y0 + self.height / 2
            self.parts.append(f'<text x="{_f(cx)}" y="{_f(cy)}" font-size="11" text-anchor="middle" '
                              f'transform="rotate(-90 {_f(cx)} {_f(cy)})">{escape(ylabel)}</text>')
        if title:
            self.text(self.x0 + self.width / 2, self.y0 - 8, title, 12, "middle", data=False)


class Figure:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.panels: list[Panel] = []
        self.parts: list[str] = []

    def panel(self, x0, y0, w, h, xlim=(0.0, 1.0), ylim=(0.0, 1.0)) -> Panel:
        p = Panel(x0, y0, w, h, xlim, ylim)
        self.panels.append(p)
        return p

    def legend(self, x, y, entries):
        for i, (label, color) in enumerate(entries):
            yy = y + 16 * i
            self.parts.append(f'<line x1="{x}" y1="{yy}" x2="{x + 18}" y2="{yy}" stroke="{color}" stroke-width="2"/>')
            self.parts.append(f'<text x="{x + 24}" y="{yy + 4}" font-size="11">{escape(label)}</text>')

    def render(self) -> str:
        body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif">',
                f'<rect width="{self.width}" height="{self.height}" fill="#fff"/>']
        for p in self.panels:
            body.extend(p.parts)
        body.extend(self.parts)
        body.append("</svg>")
        return "\n".join(body) + "\n"


def slope_color(slope: float, scale: float = 0.2) -> str:
    """Blue for falling, red for rising risk."""
    t = float(np.clip(0.5 + slope / (2 * scale), 0.0, 1.0))
    r = int(round(40 + 200 * t))
    b = int(round(240 - 200 * t))
    return f"#{r:02x}40{b:02x}"
