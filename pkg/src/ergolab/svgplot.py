"""Minimal self-contained SVG line plots.

No plotting dependency: every figure is a standalone SVG file with axes,
tick labels, one polyline per series and a small legend.  Each plot is
paired with a CSV holding the same data, so the SVG is presentation only.
"""

from __future__ import annotations

import math

_COLORS = ["#1f6fb2", "#d1495b", "#3e8d63", "#8a6d3b", "#6a4c93", "#444444"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 36, 50


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= m * mag:
            step = m * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out or [lo]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:g}"


def line_plot(path, series, title: str = "", xlabel: str = "",
              ylabel: str = "", logx: bool = False, logy: bool = False) -> None:
    """Write an SVG line plot.

    series: list of (label, xs, ys); nonpositive values are dropped on
    logarithmic axes.
    """
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if logx and x <= 0 or logy and y <= 0:
                continue
            if math.isfinite(x) and math.isfinite(y):
                pts.append((x, y))
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    x0 = min(tx(p[0]) for p in pts)
    x1 = max(tx(p[0]) for p in pts)
    y0 = min(ty(p[1]) for p in pts)
    y1 = max(ty(p[1]) for p in pts)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    padx, pady = 0.03 * (x1 - x0), 0.06 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def X(v):
        return _ML + (tx(v) - x0) / (x1 - x0) * pw

    def Y(v):
        return _MT + ph - (ty(v) - y0) / (y1 - y0) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
             f'height="{_H}" viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>',
             f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
             'fill="none" stroke="#333" stroke-width="1"/>']
    font = 'font-family="sans-serif" font-size="12"'
    if title:
        parts.append(f'<text x="{_W / 2}" y="20" text-anchor="middle" '
                     f'{font} font-size="14">{title}</text>')
    for t in _ticks(x0, x1):
        v = 10.0**t if logx else t
        px = _ML + (t - x0) / (x1 - x0) * pw
        parts.append(f'<line x1="{px:.1f}" y1="{_MT + ph}" x2="{px:.1f}" '
                     f'y2="{_MT + ph + 4}" stroke="#333"/>')
        parts.append(f'<text x="{px:.1f}" y="{_MT + ph + 18}" '
                     f'text-anchor="middle" {font}>{_fmt(v)}</text>')
    for t in _ticks(y0, y1):
        v = 10.0**t if logy else t
        py = _MT + ph - (t - y0) / (y1 - y0) * ph
        parts.append(f'<line x1="{_ML - 4}" y1="{py:.1f}" x2="{_ML}" '
                     f'y2="{py:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{_ML - 8}" y="{py + 4:.1f}" '
                     f'text-anchor="end" {font}>{_fmt(v)}</text>')
    if xlabel:
        parts.append(f'<text x="{_ML + pw / 2}" y="{_H - 10}" '
                     f'text-anchor="middle" {font}>{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{_MT + ph / 2}" text-anchor="middle" '
                     f'{font} transform="rotate(-90 16 {_MT + ph / 2})">'
                     f'{ylabel}</text>')
    for si, (label, xs, ys) in enumerate(series):
        color = _COLORS[si % len(_COLORS)]
        seg = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            ok = (math.isfinite(x) and math.isfinite(y)
                  and not (logx and x <= 0) and not (logy and y <= 0))
            if ok:
                seg.append(f"{X(x):.2f},{Y(y):.2f}")
            elif seg:
                parts.append(f'<polyline points="{" ".join(seg)}" fill="none" '
                             f'stroke="{color}" stroke-width="1.5"/>')
                seg = []
        if seg:
            parts.append(f'<polyline points="{" ".join(seg)}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 14 + 16 * si
        parts.append(f'<line x1="{_ML + pw - 120}" y1="{ly - 4}" '
                     f'x2="{_ML + pw - 100}" y2="{ly - 4}" stroke="{color}" '
                     'stroke-width="2"/>')
        parts.append(f'<text x="{_ML + pw - 94}" y="{ly}" {font}>{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
