"""
Static SVG line plots for frequency transients.

Output is plain SVG text built from polylines, axes with ticks and a legend.
Coordinates are rounded to two decimals so reruns produce identical files.
"""

import math
from dataclasses import dataclass
from html import escape
from typing import List, Optional, Sequence

import numpy as np

from export import PathLike, atomic_write_text

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#17becf",
)

MARGIN_LEFT = 70
MARGIN_RIGHT = 170
MARGIN_TOP = 40
MARGIN_BOTTOM = 50


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    color: Optional[str] = None
    dashed: bool = False


def nice_ticks(low: float, high: float, count: int = 5) -> List[float]:
    """Round tick positions covering [low, high]."""
    if not high > low:
        return [low]
    raw = (high - low) / max(count, 1)
    magnitude = 10 ** math.floor(math.log10(raw))
    step = next(m * magnitude for m in (1, 2, 2.5, 5, 10) if m * magnitude >= raw)
    first = math.ceil(low / step - 1e-9) * step
    ticks = []
    value = first
    while value <= high + 1e-9 * step:
        ticks.append(0.0 if abs(value) < 1e-12 * step else value)
        value += step
    return ticks


def _bounds(values: np.ndarray):
    low, high = float(np.min(values)), float(np.max(values))
    if high - low < 1e-12 * max(1.0, abs(low), abs(high)):
        pad = max(abs(low) * 0.1, 1e-3)
        return low - pad, high + pad
    pad = 0.05 * (high - low)
    return low - pad, high + pad


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _label(value: float) -> str:
    return f"{value:.4g}"


def line_plot(
    series: Sequence[Series],
    title: str = "",
    x_label: str = "t [s]",
    y_label: str = "ω [p.u.]",
    width: int = 760,
    height: int = 420,
) -> str:
    """Render ``series`` as one SVG document."""
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([np.asarray(s.x, dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s.y, dtype=float) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    if not x1 > x0:
        x1 = x0 + 1.0
    y0, y1 = _bounds(ys)
    plot_w = width - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = height - MARGIN_TOP - MARGIN_BOTTOM

    def px(x):
        return MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_fmt(MARGIN_LEFT + plot_w / 2)}" y="22" text-anchor="middle" '
            f'font-size="14">{escape(title)}</text>'
        )

    for tick in nice_ticks(x0, x1):
        x = _fmt(px(tick))
        parts.append(f'<line x1="{x}" y1="{MARGIN_TOP}" x2="{x}" y2="{MARGIN_TOP + plot_h}" stroke="#e5e5e5"/>')
        parts.append(
            f'<text x="{x}" y="{MARGIN_TOP + plot_h + 16}" text-anchor="middle">{_label(tick)}</text>'
        )
    for tick in nice_ticks(y0, y1):
        y = _fmt(py(tick))
        parts.append(f'<line x1="{MARGIN_LEFT}" y1="{y}" x2="{MARGIN_LEFT + plot_w}" y2="{y}" stroke="#e5e5e5"/>')
        parts.append(
            f'<text x="{MARGIN_LEFT - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">{_label(tick)}</text>'
        )
    parts.append(
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>'
    )
    parts.append(
        f'<text x="{_fmt(MARGIN_LEFT + plot_w / 2)}" y="{height - 12}" text-anchor="middle">{escape(x_label)}</text>'
    )
    parts.append(
        f'<text x="16" y="{_fmt(MARGIN_TOP + plot_h / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_fmt(MARGIN_TOP + plot_h / 2)})">{escape(y_label)}</text>'
    )

    legend_x = MARGIN_LEFT + plot_w + 16
    for k, s in enumerate(series):
        color = s.color or PALETTE[k % len(PALETTE)]
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        points = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(s.x, s.y))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = MARGIN_TOP + 10 + 18 * k
        parts.append(
            f'<line x1="{legend_x}" y1="{ly}" x2="{legend_x + 24}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>'
        )
        parts.append(
            f'<text x="{legend_x + 30}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plot(path: PathLike, series: Sequence[Series], **kwargs):
    return atomic_write_text(path, line_plot(series, **kwargs))


__all__ = ["Series", "nice_ticks", "line_plot", "write_plot", "PALETTE"]
