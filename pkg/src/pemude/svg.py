"""Minimal SVG line and heatmap plots (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _fmt(v):
    return f"{v:.3g}"


def line_plot(path, series: Sequence[Tuple[np.ndarray, np.ndarray, str]], title: str = "",
              xlabel: str = "", ylabel: str = "", logy: bool = False) -> Path:
    """``series`` is a list of (x, y, label) triples."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs, ys = [], []
    for x, y, _ in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if logy:
            y = np.log10(np.where(y > 0, y, np.nan))
        ok = np.isfinite(x) & np.isfinite(y)
        xs.append(x[ok])
        ys.append(y[ok])
    allx = np.concatenate(xs) if xs else np.zeros(1)
    ally = np.concatenate(ys) if ys else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    sx = lambda v: LEFT + (v - x0) / (x1 - x0) * pw
    sy = lambda v: TOP + ph - (v - y0) / (y1 - y0) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for v in _ticks(x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{TOP + ph + 15}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(y0, y1):
        label = _fmt(10 ** v) if logy else _fmt(v)
        out.append(f'<text x="{LEFT - 5}" y="{sy(v) + 4:.1f}" text-anchor="end">{label}</text>')
    for k, ((_, _, label), x, y) in enumerate(zip(series, xs, ys)):
        colour = PALETTE[k % len(PALETTE)]
        if x.size:
            step = max(1, x.size // 4000)
            pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[::step], y[::step]))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}"/>')
        out.append(f'<text x="{LEFT + 8}" y="{TOP + 14 + 14 * k}" fill="{colour}">{escape(label)}</text>')
    out.append(f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{H / 2}" transform="rotate(-90 15 {H / 2})" text-anchor="middle">'
               f'{escape(ylabel + (" (log10)" if logy else ""))}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out))
    return path


def heatmap(path, matrix, title: str = "", xlabels: Optional[Sequence[str]] = None,
            ylabels: Optional[Sequence[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    M = np.asarray(matrix, float)
    ny, nx = M.shape
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    cw, ch = pw / nx, ph / ny
    finite = M[np.isfinite(M)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="10">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    for i in range(ny):
        for j in range(nx):
            v = M[i, j]
            if np.isfinite(v):
                g = int(255 * (1.0 - (v - lo) / span))
                fill = f"rgb(255,{g},{g})"
            else:
                fill = "#ccc"
            out.append(f'<rect x="{LEFT + j * cw:.1f}" y="{TOP + i * ch:.1f}" width="{cw + 0.5:.1f}" '
                       f'height="{ch + 0.5:.1f}" fill="{fill}"/>')
    if xlabels is not None:
        for j, lab in enumerate(xlabels):
            out.append(f'<text x="{LEFT + (j + 0.5) * cw:.1f}" y="{TOP + ph + 14}" text-anchor="middle">{escape(str(lab))}</text>')
    if ylabels is not None:
        for i, lab in enumerate(ylabels):
            out.append(f'<text x="{LEFT - 4}" y="{TOP + (i + 0.5) * ch + 4:.1f}" text-anchor="end">{escape(str(lab))}</text>')
    out.append(f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)} '
               f'[{_fmt(lo)}, {_fmt(hi)}]</text>')
    out.append("</svg>")
    path.write_text("\n".join(out))
    return path
