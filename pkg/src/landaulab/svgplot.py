"""Minimal deterministic SVG line plots.

The report stage needs byte-stable plot artifacts: rerunning a manifest
must reproduce every output file exactly, and golden-file tests compare
SVG text verbatim.  General plotting libraries embed run-dependent ids,
dates, or font metrics, so this module draws the few shapes needed
(axes, ticks, polylines, markers, legend) with fixed formatting rules:

* every coordinate is written with ``_fmt`` (repr-stable, 6 significant
  digits), so identical data produces identical text;
* colors come from a fixed palette in series order;
* no randomness, no timestamps, no external resources.

Plots are linear or log-log; log axes place ticks at powers of ten.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = ["Series", "line_plot", "PALETTE"]

#: fixed series colors, cycled in order.
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_WIDTH = 640
_HEIGHT = 420
_MARGIN_LEFT = 72
_MARGIN_RIGHT = 24
_MARGIN_TOP = 40
_MARGIN_BOTTOM = 56


def _fmt(x: float) -> str:
    """Fixed-width coordinate formatting (deterministic, compact)."""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.6g}"


@dataclass(frozen=True)
class Series:
    """One polyline: x/y data with a label and style."""

    x: tuple[float, ...]
    y: tuple[float, ...]
    label: str
    dashed: bool = False
    markers: bool = False

    def __post_init__(self) -> None:
        xs = tuple(float(v) for v in self.x)
        ys = tuple(float(v) for v in self.y)
        if len(xs) != len(ys):
            raise ValueError("series x and y lengths differ")
        if len(xs) < 1:
            raise ValueError("series needs at least one point")
        if not all(math.isfinite(v) for v in xs + ys):
            raise ValueError("series data must be finite")
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "y", ys)


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions covering [lo, hi] at a 1/2/5 step."""
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if span / step <= target - 1 + 1e-9:
            break
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks


def _decade_ticks(lo: float, hi: float) -> list[float]:
    """Log-axis tick positions (inputs in log10 space).

    Powers of ten, padded with the 2x and 5x subticks when the span
    covers fewer than two full decades, so narrow ranges still get a
    readable axis.
    """
    decades = range(math.floor(lo) - 1, math.ceil(hi) + 1)
    if hi - lo >= 2.0:
        ticks = [float(p) for p in decades]
    else:
        offsets = (0.0, math.log10(2.0), math.log10(5.0))
        ticks = [p + o for p in decades for o in offsets]
    return [t for t in ticks if lo - 1e-12 <= t <= hi + 1e-12]


def _log_tick_text(value: float) -> str:
    power = math.floor(value + 1e-9)
    mantissa = round(10.0 ** (value - power))
    if mantissa == 10:
        mantissa = 1
        power += 1
    if mantissa == 1:
        return f"1e{power}"
    return f"{mantissa}e{power}"


def _tick_label(value: float, log_axis: bool) -> str:
    if log_axis:
        return _log_tick_text(value)
    if value == 0.0:
        return "0"
    if abs(value) >= 1e4 or abs(value) < 1e-3:
        return f"{value:.1e}"
    return _fmt(round(value, 9))


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def line_plot(
    series,
    title: str,
    xlabel: str,
    ylabel: str,
    loglog: bool = False,
) -> str:
    """Render series to a complete standalone SVG document string.

    Parameters
    ----------
    series : sequence of Series
        At least one series; in log-log mode every coordinate must be
        strictly positive.
    title, xlabel, ylabel : str
        Text decorations (escaped).
    loglog : bool
        Plot log10(x) against log10(y) with decade ticks.
    """
    series = list(series)
    if not series:
        raise ValueError("need at least one series")

    def tx(v: float) -> float:
        if loglog:
            if v <= 0.0:
                raise ValueError("log-log plots need strictly positive data")
            return math.log10(v)
        return v

    xs = [tx(v) for s in series for v in s.x]
    ys = [tx(v) for s in series for v in s.y]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi <= x_lo:
        x_lo, x_hi = x_lo - 0.5, x_lo + 0.5
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 0.5, y_lo + 0.5
    x_pad = 0.05 * (x_hi - x_lo)
    y_pad = 0.08 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def px(v: float) -> float:
        return _MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v: float) -> float:
        return _MARGIN_TOP + (y_hi - v) / (y_hi - y_lo) * plot_h

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">'
    )
    out.append(f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="#ffffff"/>')
    out.append(
        f'<text x="{_WIDTH // 2}" y="24" font-family="sans-serif" '
        f'font-size="15" text-anchor="middle">{_escape(title)}</text>'
    )

    x_ticks = _decade_ticks(x_lo, x_hi) if loglog else _nice_ticks(x_lo, x_hi)
    y_ticks = _decade_ticks(y_lo, y_hi) if loglog else _nice_ticks(y_lo, y_hi)
    x_ticks = [t for t in x_ticks if x_lo - 1e-12 <= t <= x_hi + 1e-12]
    y_ticks = [t for t in y_ticks if y_lo - 1e-12 <= t <= y_hi + 1e-12]

    for t in x_ticks:
        gx = _fmt(px(t))
        out.append(
            f'<line x1="{gx}" y1="{_fmt(py(y_lo))}" x2="{gx}" '
            f'y2="{_fmt(py(y_hi))}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{gx}" y="{_HEIGHT - _MARGIN_BOTTOM + 18}" '
            f'font-family="sans-serif" font-size="11" text-anchor="middle">'
            f"{_escape(_tick_label(t, loglog))}</text>"
        )
    for t in y_ticks:
        gy = _fmt(py(t))
        out.append(
            f'<line x1="{_fmt(px(x_lo))}" y1="{gy}" x2="{_fmt(px(x_hi))}" '
            f'y2="{gy}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{gy}" font-family="sans-serif" '
            f'font-size="11" text-anchor="end" dominant-baseline="middle">'
            f"{_escape(_tick_label(t, loglog))}</text>"
        )

    frame = (
        f'<rect x="{_MARGIN_LEFT}" y="{_MARGIN_TOP}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#333333" stroke-width="1"/>'
    )
    out.append(frame)
    out.append(
        f'<text x="{_MARGIN_LEFT + plot_w // 2}" y="{_HEIGHT - 12}" '
        f'font-family="sans-serif" font-size="12" text-anchor="middle">'
        f"{_escape(xlabel)}</text>"
    )
    out.append(
        f'<text x="18" y="{_MARGIN_TOP + plot_h // 2}" '
        f'font-family="sans-serif" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 18 {_MARGIN_TOP + plot_h // 2})">'
        f"{_escape(ylabel)}</text>"
    )

    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(
            f"{_fmt(px(tx(a)))},{_fmt(py(tx(b)))}" for a, b in zip(s.x, s.y)
        )
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.6"{dash}/>'
        )
        if s.markers:
            for a, b in zip(s.x, s.y):
                out.append(
                    f'<circle cx="{_fmt(px(tx(a)))}" cy="{_fmt(py(tx(b)))}" '
                    f'r="3" fill="{color}"/>'
                )

    legend_y = _MARGIN_TOP + 14
    for idx, s in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        y0 = legend_y + 16 * idx
        x0 = _MARGIN_LEFT + plot_w - 150
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(
            f'<line x1="{x0}" y1="{y0}" x2="{x0 + 22}" y2="{y0}" '
            f'stroke="{color}" stroke-width="1.6"{dash}/>'
        )
        out.append(
            f'<text x="{x0 + 28}" y="{y0}" font-family="sans-serif" '
            f'font-size="11" dominant-baseline="middle">'
            f"{_escape(s.label)}</text>"
        )

    out.append("</svg>")
    return "\n".join(out) + "\n"
