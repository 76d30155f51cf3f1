"""Dependency-free SVG charts for run artifacts.

Every chart is a pure function of its inputs with fixed-precision
coordinate formatting, so rerunning a pipeline rewrites byte-identical
plot files. Only the two shapes the toolkit needs are provided: line
charts (spectra, ROC, learning and selection curves) and horizontal bar
charts (attribution summaries).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
_MARGIN_LEFT = 72
_MARGIN_RIGHT = 24
_MARGIN_TOP = 40
_MARGIN_BOTTOM = 56


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _num(value: float) -> str:
    return f"{value:.2f}"


def _tick_label(value: float) -> str:
    if value == 0:
        return "0"
    if abs(value) >= 10000 or abs(value) < 0.01:
        return f"{value:.1e}"
    return f"{value:g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + i * (hi - lo) / (n - 1) for i in range(n)]


def svg_line_chart(
    path: str | Path,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    log_y: bool = False,
    width: int = 720,
    height: int = 480,
) -> None:
    """Polyline chart with axes, ticks, and a legend. With log_y, zero or
    negative y values are clamped to the smallest positive value present."""
    cleaned = []
    for label, xs, ys in series:
        xs = [float(v) for v in xs]
        ys = [float(v) for v in ys]
        if len(xs) != len(ys):
            raise ValueError(f"series {label!r}: {len(xs)} x values vs {len(ys)} y values")
        cleaned.append((label, xs, ys))
    points = [(x, y) for _, xs, ys in cleaned for x, y in zip(xs, ys)]
    if not points:
        raise ValueError("nothing to plot")

    if log_y:
        positive = [y for _, y in points if y > 0]
        floor = min(positive) if positive else 1.0
        cleaned = [
            (label, xs, [math.log10(max(y, floor)) for y in ys]) for label, xs, ys in cleaned
        ]
        points = [(x, y) for _, xs, ys in cleaned for x, y in zip(xs, ys)]

    x_lo = min(x for x, _ in points)
    x_hi = max(x for x, _ in points)
    y_lo = min(y for _, y in points)
    y_hi = max(y for _, y in points)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    plot_w = width - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = height - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(x: float) -> float:
        return _MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>'
        )

    axis_y = _MARGIN_TOP + plot_h
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{axis_y}" x2="{_MARGIN_LEFT + plot_w}" y2="{axis_y}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" y2="{axis_y}" stroke="black"/>'
    )
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        parts.append(f'<line x1="{_num(x)}" y1="{axis_y}" x2="{_num(x)}" y2="{axis_y + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{_num(x)}" y="{axis_y + 18}" text-anchor="middle">{_esc(_tick_label(t))}</text>'
        )
    for t in _ticks(y_lo, y_hi):
        y = py(t)
        label = f"1e{t:g}" if log_y else _tick_label(t)
        parts.append(f'<line x1="{_MARGIN_LEFT - 5}" y1="{_num(y)}" x2="{_MARGIN_LEFT}" y2="{_num(y)}" stroke="black"/>')
        parts.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{_num(y + 4)}" text-anchor="end">{_esc(label)}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{_MARGIN_LEFT + plot_w / 2:.0f}" y="{height - 12}" text-anchor="middle">{_esc(x_label)}</text>'
        )
    if y_label:
        cy = _MARGIN_TOP + plot_h / 2
        parts.append(
            f'<text x="16" y="{cy:.0f}" text-anchor="middle" transform="rotate(-90 16 {cy:.0f})">{_esc(y_label)}</text>'
        )

    for s, (label, xs, ys) in enumerate(cleaned):
        color = PALETTE[s % len(PALETTE)]
        coords = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if len(xs) == 1:
            parts.append(f'<circle cx="{_num(px(xs[0]))}" cy="{_num(py(ys[0]))}" r="3" fill="{color}"/>')
    if len(cleaned) > 1 or (cleaned and cleaned[0][0]):
        for s, (label, _, _) in enumerate(cleaned):
            if not label:
                continue
            color = PALETTE[s % len(PALETTE)]
            ly = _MARGIN_TOP + 8 + 16 * s
            lx = _MARGIN_LEFT + plot_w - 150
            parts.append(f'<rect x="{lx}" y="{ly - 8}" width="12" height="12" fill="{color}"/>')
            parts.append(f'<text x="{lx + 18}" y="{ly + 2}">{_esc(label)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def svg_bar_chart(
    path: str | Path,
    labels: Sequence[str],
    values: Sequence[float],
    title: str = "",
    x_label: str = "",
    width: int = 720,
    bar_height: int = 22,
) -> None:
    """Horizontal bars in the given order, value printed at each bar end."""
    if len(labels) != len(values):
        raise ValueError(f"{len(labels)} labels vs {len(values)} values")
    if not labels:
        raise ValueError("nothing to plot")
    values = [float(v) for v in values]
    v_hi = max(max(values), 0.0)
    if v_hi == 0.0:
        v_hi = 1.0
    label_w = 8 * max(len(l) for l in labels) + 16
    plot_w = width - label_w - 90
    height = _MARGIN_TOP + len(labels) * (bar_height + 6) + 40

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>'
        )
    for i, (label, value) in enumerate(zip(labels, values)):
        y = _MARGIN_TOP + i * (bar_height + 6)
        w = max(value, 0.0) / v_hi * plot_w
        parts.append(f'<text x="{label_w - 8}" y="{y + bar_height - 6}" text-anchor="end">{_esc(label)}</text>')
        parts.append(
            f'<rect x="{label_w}" y="{y}" width="{_num(w)}" height="{bar_height}" fill="{PALETTE[0]}"/>'
        )
        parts.append(f'<text x="{_num(label_w + w + 6)}" y="{y + bar_height - 6}">{value:.4g}</text>')
    if x_label:
        parts.append(
            f'<text x="{label_w + plot_w / 2:.0f}" y="{height - 10}" text-anchor="middle">{_esc(x_label)}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
