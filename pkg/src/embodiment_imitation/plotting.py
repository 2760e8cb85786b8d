"""Minimal SVG line plots for learning curves and distance series."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def line_plot_svg(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 640, height: int = 400) -> str:
    """SVG text for ``{label: (x, y)}``; non-finite points are skipped."""
    left, right, top, bottom = 70, 20, 40, 50
    pts = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    finite = [(x[np.isfinite(y)], y[np.isfinite(y)]) for x, y in pts]
    xs = np.concatenate([x for x, _ in finite]) if finite else np.zeros(1)
    ys = np.concatenate([y for _, y in finite]) if finite else np.zeros(1)
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{top + ph + 16}" text-anchor="middle">{fx:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
    out.append(f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, (x, y)) in enumerate(zip(series, finite)):
        color = _COLORS[k % len(_COLORS)]
        if len(x):
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{left + pw - 6}" y="{top + 16 + 16 * k}" text-anchor="end" '
                   f'fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_line_svg(path, series: dict, **kwargs) -> None:
    Path(path).write_text(line_plot_svg(series, **kwargs))
