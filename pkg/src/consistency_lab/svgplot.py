"""Standalone SVG line/scatter plots with CSV sidecars.

The emitter is deliberately dependency-free and byte-deterministic:
identical series produce identical files, which the harness relies on
for reproducibility checks.  Each plot writes a ``.csv`` sidecar with
the exact numeric values rendered.
"""

from __future__ import annotations

import math
from pathlib import Path

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50


class PlotUsageError(ValueError):
    """Raised for empty input without the explicit empty-plot flag."""


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5):
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * span:
        ticks.append(v)
        v += step
    return ticks


def emit_plot(series, path, title="", xlabel="", ylabel="", logy=False,
              allow_empty=False) -> None:
    """Render series = [{label, x, y}, ...] to an SVG file plus CSV sidecar."""
    path = Path(path)
    series = list(series)
    if not series or all(len(s["x"]) == 0 for s in series):
        if not allow_empty:
            raise PlotUsageError("no series to plot; pass allow_empty=True for a blank plot")
        series = []

    rows = []
    for s in series:
        if len(s["x"]) != len(s["y"]):
            raise ValueError(f"series {s.get('label', '')!r} has mismatched x/y lengths")
        for xv, yv in zip(s["x"], s["y"]):
            rows.append((s.get("label", ""), float(xv), float(yv)))

    sidecar = path.with_suffix(".csv")
    with open(sidecar, "w", encoding="utf-8") as fh:
        fh.write("label,x,y\n")
        for label, xv, yv in rows:
            fh.write(f"{label},{xv!r},{yv!r}\n")

    xs = [r[1] for r in rows]
    ys = [r[2] for r in rows]
    if logy:
        if any(y <= 0 for y in ys):
            raise ValueError("log scale requires positive y values")
        ys = [math.log10(y) for y in ys]

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )

    if rows:
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_lo == x_hi:
            x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
        if y_lo == y_hi:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

        def sx(v):
            return MARGIN_L + (v - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R)

        def sy(v):
            return HEIGHT - MARGIN_B - (v - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)

        # axes
        parts.append(
            f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
            f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
            f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>'
        )
        for tx in _ticks(x_lo, x_hi):
            parts.append(
                f'<line x1="{_fmt(sx(tx))}" y1="{HEIGHT - MARGIN_B}" x2="{_fmt(sx(tx))}" '
                f'y2="{HEIGHT - MARGIN_B + 5}" stroke="black"/>'
            )
            parts.append(
                f'<text x="{_fmt(sx(tx))}" y="{HEIGHT - MARGIN_B + 18}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>'
            )
        for ty in _ticks(y_lo, y_hi):
            label = f"1e{_fmt(ty)}" if logy else _fmt(ty)
            parts.append(
                f'<line x1="{MARGIN_L - 5}" y1="{_fmt(sy(ty))}" x2="{MARGIN_L}" '
                f'y2="{_fmt(sy(ty))}" stroke="black"/>'
            )
            parts.append(
                f'<text x="{MARGIN_L - 8}" y="{_fmt(sy(ty) + 4)}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11">{label}</text>'
            )

        offset = 0
        for k, s in enumerate(series):
            color = COLORS[k % len(COLORS)]
            pts = rows[offset:offset + len(s["x"])]
            offset += len(s["x"])
            coords = [(sx(xv), sy(math.log10(yv) if logy else yv)) for _, xv, yv in pts]
            if len(coords) > 1:
                d = " ".join(f"{_fmt(cx)},{_fmt(cy)}" for cx, cy in coords)
                parts.append(
                    f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>'
                )
            for cx, cy in coords:
                parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="3" fill="{color}"/>')
            label = s.get("label", "")
            if label:
                ly = MARGIN_T + 14 * k
                parts.append(
                    f'<rect x="{WIDTH - MARGIN_R - 150}" y="{ly - 8}" width="10" height="10" '
                    f'fill="{color}"/>'
                )
                parts.append(
                    f'<text x="{WIDTH - MARGIN_R - 135}" y="{ly + 1}" font-family="sans-serif" '
                    f'font-size="11">{label}</text>'
                )
    if xlabel:
        parts.append(
            f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) / 2}" y="{HEIGHT - 12}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>'
        )
    if ylabel:
        ymid = (MARGIN_T + HEIGHT - MARGIN_B) / 2
        parts.append(
            f'<text x="16" y="{_fmt(ymid)}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12" transform="rotate(-90 16 {_fmt(ymid)})">{ylabel}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
