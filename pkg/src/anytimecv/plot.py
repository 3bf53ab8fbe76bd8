"""Hand-written SVG output: learning-curve step plots and ALC boxplots.

Coordinates are printed with fixed precision so equal inputs give equal
bytes, which keeps golden-file tests meaningful.
"""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ConfigError

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 60, "right": 170, "top": 30, "bottom": 50}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
           "#7f7f7f")


def _f(x):
    return f"{x:.2f}"


def _frame(title, y_label, x_label):
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="14">'
        f"{escape(title)}</text>",
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="black"/>',
        f'<text x="{MARGIN["left"] + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">'
        f"{escape(x_label)}</text>",
        f'<text x="14" y="{MARGIN["top"] + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN["top"] + ph / 2:.2f})">{escape(y_label)}</text>',
    ]
    return parts, pw, ph


def _series_of(report):
    """(label, points, alc) from a RunReport, a LearningCurve or a plain dict."""
    if isinstance(report, dict):
        return report.get("label"), [tuple(p) for p in report["curve"]], report.get("alc")
    curve = getattr(report, "curve", report)
    return getattr(report, "label", None), list(curve.points), getattr(report, "alc", None)


def render_plot(reports, path, labels=None, budget=None, title="Learning curve"):
    """Step plot of NAUC(t) per report, one legend entry each with its ALC.

    The x axis is linear in seconds up to ``budget`` (default: the latest
    timestamp). Each step holds its value until the next point and the last
    value runs to the right edge.
    """
    if not reports:
        raise ConfigError("render_plot needs at least one report")
    series = [_series_of(r) for r in reports]
    if labels is not None:
        series = [(lab, pts, a) for lab, (_, pts, a) in zip(labels, series)]
    t_max = budget or max((pts[-1][0] for _, pts, _ in series if pts), default=1.0) or 1.0
    parts, pw, ph = _frame(title, "NAUC", "time (s)")

    def px(t):
        return MARGIN["left"] + pw * min(t, t_max) / t_max

    def py(v):
        # negative NAUC is drawn on the axis
        return MARGIN["top"] + ph * (1.0 - min(max(v, 0.0), 1.0))

    for tick in range(6):
        v = tick / 5
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{_f(py(v) + 4)}" text-anchor="end">'
                     f"{v:.1f}</text>")
        t = t_max * tick / 5
        parts.append(f'<text x="{_f(px(t))}" y="{HEIGHT - MARGIN["bottom"] + 16}" '
                     f'text-anchor="middle">{t:.0f}</text>')
    for i, (label, pts, a) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if pts:
            d = [f"M{_f(px(pts[0][0]))},{_f(py(pts[0][1]))}"]
            for j, (t, v) in enumerate(pts):
                t_next = pts[j + 1][0] if j + 1 < len(pts) else t_max
                y = _f(py(v))
                d.append(f"L{_f(px(t))},{y}")
                d.append(f"L{_f(px(t_next))},{y}")
            parts.append(f'<path class="series" d="{" ".join(d)}" fill="none" '
                         f'stroke="{color}" stroke-width="2"/>')
        name = label if label is not None else f"run {i + 1}"
        text = f"{name} (ALC {a:.4f})" if a is not None else str(name)
        ly = MARGIN["top"] + 14 + 18 * i
        lx = WIDTH - MARGIN["right"] + 10
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 16}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text class="legend" x="{lx + 20}" y="{ly}">{escape(text)}</text>')
    parts.append("</svg>")
    return _write(path, parts)


def _quantiles(vals):
    s = sorted(vals)

    def q(p):
        pos = p * (len(s) - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, len(s) - 1)
        return s[lo] + (s[hi] - s[lo]) * (pos - lo)

    return q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)


def render_boxplot(groups, path, title="ALC by configuration"):
    """One box per ``(name, values)`` group: quartiles, median and min/max whiskers."""
    if not groups:
        raise ConfigError("render_boxplot needs at least one group")
    vals = [v for _, vs in groups for v in vs]
    lo = min(vals, default=0.0)
    hi = max(vals, default=1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.05, hi + 0.05
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    parts, pw, ph = _frame(title, "ALC", "configuration")

    def py(v):
        return MARGIN["top"] + ph * (hi - v) / (hi - lo)

    for tick in range(5):
        v = lo + (hi - lo) * tick / 4
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{_f(py(v) + 4)}" text-anchor="end">'
                     f"{v:.3f}</text>")
    slot = pw / len(groups)
    for i, (name, vs) in enumerate(groups):
        cx = MARGIN["left"] + slot * (i + 0.5)
        half = min(30.0, slot / 3)
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<text x="{_f(cx)}" y="{HEIGHT - MARGIN["bottom"] + 16}" '
                     f'text-anchor="middle">{escape(str(name))}</text>')
        if not vs:
            continue
        mn, q1, med, q3, mx = _quantiles(vs)
        parts.append(f'<line x1="{_f(cx)}" y1="{_f(py(mx))}" x2="{_f(cx)}" y2="{_f(py(mn))}" '
                     'stroke="black"/>')
        parts.append(f'<rect class="box" x="{_f(cx - half)}" y="{_f(py(q3))}" '
                     f'width="{_f(2 * half)}" height="{_f(py(q1) - py(q3))}" '
                     f'fill="{color}" fill-opacity="0.4" stroke="black"/>')
        parts.append(f'<line x1="{_f(cx - half)}" y1="{_f(py(med))}" x2="{_f(cx + half)}" '
                     f'y2="{_f(py(med))}" stroke="black" stroke-width="2"/>')
        for v in vs:
            parts.append(f'<circle cx="{_f(cx)}" cy="{_f(py(v))}" r="2" fill="black"/>')
    parts.append("</svg>")
    return _write(path, parts)


def _write(path, parts):
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path
