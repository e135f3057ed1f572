"""Minimal deterministic SVG charts, no plotting dependency.

Coordinates are formatted to two decimals with a fixed layout, so identical
data always renders byte-identical markup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

WIDTH = 960
HEIGHT = 560
MARGIN_LEFT = 70
MARGIN_RIGHT = 70
MARGIN_TOP = 50
MARGIN_BOTTOM = 70

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    kind: str = "line"      # "line" | "scatter" | "step"
    axis: str = "left"      # "left" | "right"


@dataclass
class Chart:
    title: str
    x_label: str
    y_label: str
    series: list[Series] = field(default_factory=list)
    y2_label: str | None = None


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    magnitude = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * magnitude
        if step >= raw:
            break
    first = step * math.ceil(lo / step)
    ticks = []
    value = first
    while value <= hi + 1e-9 * step:
        ticks.append(round(value, 10))
        value += step
    return ticks


def _fmt(value: float) -> str:
    text = f"{value:.6g}"
    return text


def render_chart(chart: Chart) -> str:
    left, right = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    top, bottom = MARGIN_TOP, HEIGHT - MARGIN_BOTTOM

    xs = [v for s in chart.series for v in s.x]
    if not xs:
        raise ValueError("chart has no data")
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def axis_range(axis: str) -> tuple[float, float]:
        ys = [v for s in chart.series if s.axis == axis for v in s.y]
        if not ys:
            return 0.0, 1.0
        lo = min(0.0, min(ys))
        hi = max(ys)
        if hi == lo:
            hi = lo + 1.0
        return lo, hi * 1.05

    y_lo, y_hi = axis_range("left")
    y2_lo, y2_hi = axis_range("right")

    def px(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * (right - left)

    def py(y: float, axis: str = "left") -> float:
        lo, hi = (y_lo, y_hi) if axis == "left" else (y2_lo, y2_hi)
        return bottom - (y - lo) / (hi - lo) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.2f}" y="28" text-anchor="middle" font-size="18" '
        f'font-family="sans-serif">{_escape(chart.title)}</text>',
    ]

    for tick in _nice_ticks(y_lo, y_hi):
        y = py(tick)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{right}" y2="{y:.2f}" '
                   f'stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-size="12" font-family="sans-serif">{_fmt(tick)}</text>')
    if chart.y2_label is not None:
        for tick in _nice_ticks(y2_lo, y2_hi):
            y = py(tick, "right")
            out.append(f'<text x="{right + 8}" y="{y + 4:.2f}" text-anchor="start" '
                       f'font-size="12" font-family="sans-serif">{_fmt(tick)}</text>')
    for tick in _nice_ticks(x_lo, x_hi, count=8):
        x = px(tick)
        out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 5}" '
                   f'stroke="#000000" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{bottom + 22}" text-anchor="middle" '
                   f'font-size="12" font-family="sans-serif">{_fmt(tick)}</text>')

    out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" '
               f'stroke="#000000" stroke-width="1.5"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" '
               f'stroke="#000000" stroke-width="1.5"/>')
    if chart.y2_label is not None:
        out.append(f'<line x1="{right}" y1="{top}" x2="{right}" y2="{bottom}" '
                   f'stroke="#000000" stroke-width="1.5"/>')

    for index, series in enumerate(chart.series):
        color = COLORS[index % len(COLORS)]
        points = sorted(zip(series.x, series.y))
        if series.kind == "scatter":
            for x, y in points:
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y, series.axis):.2f}" '
                           f'r="3" fill="{color}" fill-opacity="0.7"/>')
        else:
            coords: list[tuple[float, float]] = []
            previous_y: float | None = None
            for x, y in points:
                if series.kind == "step" and previous_y is not None:
                    coords.append((px(x), py(previous_y, series.axis)))
                coords.append((px(x), py(y, series.axis)))
                previous_y = y
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                       f'points="{path}"/>')
        ly = top + 18 * index + 12
        out.append(f'<line x1="{right - 190}" y1="{ly}" x2="{right - 166}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="3"/>')
        out.append(f'<text x="{right - 160}" y="{ly + 4}" font-size="12" '
                   f'font-family="sans-serif">{_escape(series.label)}</text>')

    out.append(f'<text x="{(left + right) / 2:.2f}" y="{HEIGHT - 18}" text-anchor="middle" '
               f'font-size="13" font-family="sans-serif">{_escape(chart.x_label)}</text>')
    out.append(f'<text x="20" y="{(top + bottom) / 2:.2f}" text-anchor="middle" '
               f'font-size="13" font-family="sans-serif" '
               f'transform="rotate(-90 20 {(top + bottom) / 2:.2f})">'
               f'{_escape(chart.y_label)}</text>')
    if chart.y2_label is not None:
        x2 = WIDTH - 16
        out.append(f'<text x="{x2}" y="{(top + bottom) / 2:.2f}" text-anchor="middle" '
                   f'font-size="13" font-family="sans-serif" '
                   f'transform="rotate(90 {x2} {(top + bottom) / 2:.2f})">'
                   f'{_escape(chart.y2_label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
