"""Self-contained SVG line plots, no plotting dependency.

Log-scale y axis by default: convergence errors span many decades. Output is
deterministic (fixed float formatting), so plot files are diffable.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["line_plot_svg", "write_line_plot"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 880, 560
_ML, _MR, _MT, _MB = 80, 24, 44, 56
_FLOOR = 1e-300


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _sci_label(exp: int) -> str:
    return f"1e{exp}"


def line_plot_svg(
    curves,
    title: str = "",
    xlabel: str = "step j",
    ylabel: str = "error",
    logy: bool = True,
) -> str:
    """Render curves [(label, x, y), ...] to an SVG document string."""
    if not curves:
        raise ValueError("need at least one curve")
    xs = np.concatenate([np.asarray(c[1], dtype=float) for c in curves])
    ys = np.concatenate([np.asarray(c[2], dtype=float) for c in curves])
    ys = np.where(np.isfinite(ys), ys, _FLOOR)
    if logy:
        ys = np.abs(ys)
        ys = np.where(ys > _FLOOR, ys, _FLOOR)
        positive = ys[ys > _FLOOR]
        y_hi = float(np.max(positive)) if positive.size else 1.0
        y_lo = float(np.min(positive)) if positive.size else 1e-16
        y_lo = max(y_lo, y_hi * 1e-18)
        lo_e = math.floor(math.log10(y_lo))
        hi_e = math.ceil(math.log10(y_hi))
        if hi_e == lo_e:
            hi_e += 1
    else:
        y_lo, y_hi = float(np.min(ys)), float(np.max(ys))
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
    x_lo, x_hi = float(np.min(xs)), float(np.max(xs))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def px(x: float) -> float:
        return _ML + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y: float) -> float:
        if logy:
            ly = math.log10(max(abs(y), _FLOOR))
            ly = min(max(ly, lo_e), hi_e)
            return _MT + ph * (hi_e - ly) / (hi_e - lo_e)
        return _MT + ph * (y_hi - y) / (y_hi - y_lo)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="13">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{_W / 2:.1f}" y="26" text-anchor="middle" font-size="15">{title}</text>')

    # y gridlines
    if logy:
        span = hi_e - lo_e
        step = max(1, int(math.ceil(span / 10)))
        for e in range(lo_e, hi_e + 1, step):
            yy = py(10.0**e)
            parts.append(f'<line x1="{_ML}" y1="{_fmt(yy)}" x2="{_ML + pw}" y2="{_fmt(yy)}" stroke="#ddd"/>')
            parts.append(f'<text x="{_ML - 8}" y="{_fmt(yy + 4)}" text-anchor="end">{_sci_label(e)}</text>')
    else:
        for frac in np.linspace(0, 1, 6):
            val = y_lo + frac * (y_hi - y_lo)
            yy = py(val)
            parts.append(f'<line x1="{_ML}" y1="{_fmt(yy)}" x2="{_ML + pw}" y2="{_fmt(yy)}" stroke="#ddd"/>')
            parts.append(f'<text x="{_ML - 8}" y="{_fmt(yy + 4)}" text-anchor="end">{val:.3g}</text>')

    # x ticks
    for frac in np.linspace(0, 1, 6):
        val = x_lo + frac * (x_hi - x_lo)
        xx = px(val)
        parts.append(f'<line x1="{_fmt(xx)}" y1="{_MT + ph}" x2="{_fmt(xx)}" y2="{_MT + ph + 5}" stroke="#333"/>')
        parts.append(f'<text x="{_fmt(xx)}" y="{_MT + ph + 20}" text-anchor="middle">{val:.3g}</text>')

    parts.append(
        f'<text x="{_ML + pw / 2:.1f}" y="{_H - 14}" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="20" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {_MT + ph / 2:.1f})">{ylabel}</text>'
    )

    for ci, (label, cx, cy) in enumerate(curves):
        cx = np.asarray(cx, dtype=float)
        cy = np.asarray(cy, dtype=float)
        color = _COLORS[ci % len(_COLORS)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(cx, cy))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.4"/>')
        ly = _MT + 18 + 18 * ci
        parts.append(f'<line x1="{_ML + pw - 170}" y1="{ly - 4}" x2="{_ML + pw - 140}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_ML + pw - 132}" y="{ly}">{label}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_line_plot(path: str, curves, **kwargs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(line_plot_svg(curves, **kwargs))
