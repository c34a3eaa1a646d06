"""Dependency-free deterministic SVG charts.

Every figure the reporter emits is a pure function of the numbers passed
in: fixed canvas, fixed palette, floats formatted with %.6g. Rendering
the same data twice yields byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62, 16, 34, 46
PALETTE = ("#1f6fb4", "#d1542c", "#3d8f4e", "#8458a8", "#a88325", "#5a6570")


def _fmt(v: float) -> str:
    return f"{float(v):.6g}"


@dataclass
class Line:
    label: str
    xs: np.ndarray
    ys: np.ndarray
    color: str = ""


@dataclass
class Ribbon:
    xs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    color: str = ""


@dataclass
class Points:
    label: str
    xs: np.ndarray
    ys: np.ndarray
    color: str = ""
    texts: list[str] = field(default_factory=list)


class Chart:
    """Collects series, then renders one SVG with shared axes."""

    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.lines: list[Line] = []
        self.ribbons: list[Ribbon] = []
        self.points: list[Points] = []
        self.href_lines: list[float] = []
        self.vref_lines: list[float] = []

    def add_line(self, label, xs, ys, color=""):
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        if xs.shape != ys.shape or xs.ndim != 1:
            raise UsageError("line xs/ys must be equal-length 1-D")
        self.lines.append(Line(label, xs, ys, color))

    def add_ribbon(self, xs, lo, hi, color=""):
        self.ribbons.append(Ribbon(np.asarray(xs, float), np.asarray(lo, float),
                                   np.asarray(hi, float), color))

    def add_points(self, label, xs, ys, color="", texts=None):
        self.points.append(Points(label, np.asarray(xs, float),
                                  np.asarray(ys, float), color, texts or []))

    def _bounds(self):
        xs_all, ys_all = [], []
        for ln in self.lines:
            xs_all.append(ln.xs)
            ys_all.append(ln.ys)
        for rb in self.ribbons:
            xs_all.append(rb.xs)
            ys_all.extend([rb.lo, rb.hi])
        for pt in self.points:
            xs_all.append(pt.xs)
            ys_all.append(pt.ys)
        if not xs_all:
            raise UsageError("chart has no data")
        xs = np.concatenate(xs_all)
        ys = np.concatenate([np.asarray(y) for y in ys_all])
        ys = ys[np.isfinite(ys)]
        if ys.size == 0:
            raise UsageError("chart has no finite y values")
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        for v in self.vref_lines:
            x0, x1 = min(x0, v), max(x1, v)
        for v in self.href_lines:
            y0, y1 = min(y0, v), max(y1, v)
        if x0 == x1:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y0 == y1:
            y0, y1 = y0 - 1.0, y1 + 1.0
        pad_y = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad_y, y1 + pad_y

    def render(self) -> str:
        x0, x1, y0, y1 = self._bounds()
        iw = WIDTH - MARGIN_L - MARGIN_R
        ih = HEIGHT - MARGIN_T - MARGIN_B

        def sx(x):
            return MARGIN_L + (x - x0) / (x1 - x0) * iw

        def sy(y):
            return MARGIN_T + (y1 - y) / (y1 - y0) * ih

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
            f'font-family="monospace" font-size="12">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.6g}" y="20" text-anchor="middle" '
            f'font-size="14">{_esc(self.title)}</text>',
        ]
        # axes frame and ticks
        out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{iw}" height="{ih}" '
                   'fill="none" stroke="#444" stroke-width="1"/>')
        for tx in np.linspace(x0, x1, 5):
            px = sx(tx)
            out.append(f'<line x1="{px:.6g}" y1="{MARGIN_T + ih}" x2="{px:.6g}" '
                       f'y2="{MARGIN_T + ih + 4}" stroke="#444"/>')
            out.append(f'<text x="{px:.6g}" y="{MARGIN_T + ih + 17}" '
                       f'text-anchor="middle" font-size="10">{_fmt(tx)}</text>')
        for ty in np.linspace(y0, y1, 5):
            py = sy(ty)
            out.append(f'<line x1="{MARGIN_L - 4}" y1="{py:.6g}" x2="{MARGIN_L}" '
                       f'y2="{py:.6g}" stroke="#444"/>')
            out.append(f'<text x="{MARGIN_L - 7}" y="{py + 3.5:.6g}" '
                       f'text-anchor="end" font-size="10">{_fmt(ty)}</text>')
        out.append(f'<text x="{MARGIN_L + iw / 2:.6g}" y="{HEIGHT - 8}" '
                   f'text-anchor="middle">{_esc(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{MARGIN_T + ih / 2:.6g}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {MARGIN_T + ih / 2:.6g})">'
                   f'{_esc(self.ylabel)}</text>')
        for v in self.vref_lines:
            px = sx(v)
            out.append(f'<line x1="{px:.6g}" y1="{MARGIN_T}" x2="{px:.6g}" '
                       f'y2="{MARGIN_T + ih}" stroke="#999" stroke-dasharray="4 3"/>')
        for v in self.href_lines:
            py = sy(v)
            out.append(f'<line x1="{MARGIN_L}" y1="{py:.6g}" x2="{MARGIN_L + iw}" '
                       f'y2="{py:.6g}" stroke="#999" stroke-dasharray="4 3"/>')

        color_idx = 0

        def next_color():
            nonlocal color_idx
            c = PALETTE[color_idx % len(PALETTE)]
            color_idx += 1
            return c

        for rb in self.ribbons:
            c = rb.color or next_color()
            fwd = [f"{sx(x):.6g},{sy(y):.6g}" for x, y in zip(rb.xs, rb.hi)]
            back = [f"{sx(x):.6g},{sy(y):.6g}" for x, y in zip(rb.xs[::-1], rb.lo[::-1])]
            out.append(f'<polygon points="{" ".join(fwd + back)}" fill="{c}" '
                       'fill-opacity="0.18" stroke="none"/>')
        legend_y = MARGIN_T + 6
        for ln in self.lines:
            c = ln.color or next_color()
            pts = " ".join(f"{sx(x):.6g},{sy(y):.6g}" for x, y in zip(ln.xs, ln.ys)
                           if np.isfinite(y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" '
                       'stroke-width="1.5"/>')
            if ln.label:
                out.append(f'<line x1="{MARGIN_L + iw - 130}" y1="{legend_y + 4}" '
                           f'x2="{MARGIN_L + iw - 112}" y2="{legend_y + 4}" '
                           f'stroke="{c}" stroke-width="2"/>')
                out.append(f'<text x="{MARGIN_L + iw - 107}" y="{legend_y + 8}" '
                           f'font-size="11">{_esc(ln.label)}</text>')
                legend_y += 15
        for pt in self.points:
            c = pt.color or next_color()
            for i, (x, y) in enumerate(zip(pt.xs, pt.ys)):
                if not (np.isfinite(x) and np.isfinite(y)):
                    continue
                out.append(f'<circle cx="{sx(x):.6g}" cy="{sy(y):.6g}" r="3.5" '
                           f'fill="{c}" fill-opacity="0.85"/>')
                if i < len(pt.texts):
                    out.append(f'<text x="{sx(x) + 5:.6g}" y="{sy(y) - 4:.6g}" '
                               f'font-size="10">{_esc(pt.texts[i])}</text>')
            if pt.label:
                out.append(f'<circle cx="{MARGIN_L + iw - 125}" cy="{legend_y + 4}" '
                           f'r="3.5" fill="{c}"/>')
                out.append(f'<text x="{MARGIN_L + iw - 115}" y="{legend_y + 8}" '
                           f'font-size="11">{_esc(pt.label)}</text>')
                legend_y += 15
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render())
        return path


def _esc(s: str) -> str:
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))
