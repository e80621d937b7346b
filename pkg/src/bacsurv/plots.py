"""Self-contained SVG figures: Kaplan-Meier curves and the sweep heat-map.

Output is plain text built with fixed-precision number formatting and no
timestamps, so identical input yields identical bytes.
"""

from dataclasses import dataclass
import math
from xml.sax.saxutils import escape

import numpy as np

from .cohort import DAYS_PER_YEAR

# one color per severity class, in legend order
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")

WIDTH, HEIGHT = 640, 440
LEFT, RIGHT, TOP = 70, 20, 40
PLOT_H = 260
TABLE_ROW = 16


class PlotInputError(ValueError):
    pass


@dataclass(frozen=True)
class StepSeries:
    """A survival step function with its confidence band.

    ``times`` are the jump times; ``survival[i]`` holds from ``times[i]`` to
    the next jump, and the curve starts at 1 at time 0.
    """

    label: str
    times: tuple
    survival: tuple
    lower: tuple
    upper: tuple
    at_risk_times: tuple = ()
    at_risk: tuple = ()

    def __post_init__(self):
        n = len(self.times)
        if n == 0:
            raise PlotInputError(f"series {self.label!r} is empty")
        if not (len(self.survival) == len(self.lower) == len(self.upper) == n):
            raise PlotInputError(f"series {self.label!r}: times, survival and band lengths differ")
        if len(self.at_risk_times) != len(self.at_risk):
            raise PlotInputError(f"series {self.label!r}: at-risk times and counts differ in length")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise PlotInputError(f"series {self.label!r}: times must be non-decreasing")

    @classmethod
    def from_curve(cls, curve, scale=1.0 / DAYS_PER_YEAR, risk_ticks=None):
        """Build from a :class:`~bacsurv.survival.SurvivalCurve` (days -> years by default)."""
        keep = curve.n_events > 0
        if not keep.any():
            keep = np.zeros_like(keep)
            keep[-1] = True
        t = curve.time_points[keep] * scale
        ticks = () if risk_ticks is None else tuple(float(x) for x in risk_ticks)
        counts = tuple(int(c) for c in curve.at_risk_at(np.asarray(ticks) / scale)) if ticks else ()
        return cls(
            label=curve.stratum_label,
            times=tuple(float(x) for x in t),
            survival=tuple(float(x) for x in curve.survival[keep]),
            lower=tuple(float(x) for x in curve.ci_lower[keep]),
            upper=tuple(float(x) for x in curve.ci_upper[keep]),
            at_risk_times=ticks,
            at_risk=counts,
        )


def _f(x):
    return f"{x:.2f}"


def _clamp01(v):
    return min(max(v, 0.0), 1.0)


def _nice_ticks(hi, n=6):
    if hi <= 0:
        return [0.0]
    raw = hi / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    return [i * step for i in range(int(math.floor(hi / step + 1e-9)) + 1)]


def _step_points(times, values, t_max):
    pts = [(0.0, 1.0)]
    prev = 1.0
    for t, v in zip(times, values):
        pts.append((t, prev))
        pts.append((t, v))
        prev = v
    pts.append((t_max, prev))
    return pts


def km_svg(series, title="", x_label="Years since index", y_range=None):
    """Render step curves with shaded bands and an at-risk table.

    Parameters
    ----------
    series : sequence of StepSeries
        Drawn and listed in the legend in the given order.
    y_range : (float, float), optional
        Survival axis limits; defaults to the data range within ``[0, 1]``.
    """
    series = list(series)
    if not series:
        raise PlotInputError("nothing to plot")
    t_max = max(max(s.times) for s in series)
    t_max = max(t_max, max((max(s.at_risk_times) for s in series if s.at_risk_times), default=0.0))
    if t_max <= 0:
        t_max = 1.0
    if y_range is None:
        lo = min(min(_clamp01(v) for v in s.lower) for s in series)
        y_range = (max(0.0, math.floor(lo * 20) / 20), 1.0)
    y0, y1 = y_range
    if not y1 > y0:
        y0 = y1 - 0.05
    plot_w = WIDTH - LEFT - RIGHT
    n_table = sum(1 for s in series if s.at_risk_times)
    height = TOP + PLOT_H + 50 + (TABLE_ROW * (n_table + 1) if n_table else 0) + 20 * len(series)

    def px(t):
        return LEFT + plot_w * t / t_max

    def py(v):
        return TOP + PLOT_H * (1.0 - (_clamp01(v) - y0) / (y1 - y0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>',
        f'<clipPath id="plot-area"><rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{PLOT_H}"/></clipPath>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>')
    # axes
    out.append(f'<line x1="{LEFT}" y1="{TOP + PLOT_H}" x2="{LEFT + plot_w}" y2="{TOP + PLOT_H}" stroke="black"/>')
    out.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + PLOT_H}" stroke="black"/>')
    for t in _nice_ticks(t_max):
        x = px(t)
        out.append(f'<line x1="{_f(x)}" y1="{TOP + PLOT_H}" x2="{_f(x)}" y2="{TOP + PLOT_H + 4}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{TOP + PLOT_H + 16}" text-anchor="middle">{t:g}</text>')
    for v in _nice_ticks(y1 - y0, 5):
        y = py(y0 + v)
        out.append(f'<line x1="{LEFT - 4}" y1="{_f(y)}" x2="{LEFT}" y2="{_f(y)}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_f(y + 4)}" text-anchor="end">{y0 + v:.2f}</text>')
    out.append(f'<text x="{LEFT + plot_w / 2:.1f}" y="{TOP + PLOT_H + 32}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="16" y="{TOP + PLOT_H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + PLOT_H / 2:.1f})">Event-free survival</text>'
    )
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        lo = _step_points(s.times, s.lower, t_max)
        hi = _step_points(s.times, s.upper, t_max)
        band = " ".join(f"{_f(px(t))},{_f(py(v))}" for t, v in hi + lo[::-1])
        out.append(
            f'<polygon class="band" data-series="{i}" points="{band}" fill="{color}" '
            f'fill-opacity="0.18" stroke="none" clip-path="url(#plot-area)"/>'
        )
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = _step_points(s.times, s.survival, t_max)
        d = "M" + " L".join(f"{_f(px(t))},{_f(py(v))}" for t, v in pts)
        out.append(
            f'<path class="step" data-series="{i}" d="{d}" fill="none" stroke="{color}" '
            f'stroke-width="1.6" clip-path="url(#plot-area)"/>'
        )
    # legend in series order
    ly = TOP + PLOT_H + 46
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        y = ly + 20 * i
        out.append(f'<rect class="legend" x="{LEFT}" y="{y - 9}" width="14" height="10" fill="{color}"/>')
        out.append(f'<text x="{LEFT + 20}" y="{y}">{escape(s.label)}</text>')
    if n_table:
        ty = ly + 20 * len(series) + 4
        out.append(f'<text x="{LEFT}" y="{ty}" font-weight="bold">Number at risk</text>')
        row = 0
        for i, s in enumerate(series):
            if not s.at_risk_times:
                continue
            row += 1
            y = ty + TABLE_ROW * row
            out.append(f'<text x="{LEFT - 6}" y="{y}" text-anchor="end" fill="{PALETTE[i % len(PALETTE)]}">{escape(s.label)}</text>')
            for t, c in zip(s.at_risk_times, s.at_risk):
                out.append(f'<text class="at-risk" x="{_f(px(t))}" y="{y}" text-anchor="middle">{c}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color_scale(v, lo, hi):
    # white -> dark blue
    frac = 0.0 if hi <= lo else (v - lo) / (hi - lo)
    frac = min(max(frac, 0.0), 1.0)
    r = round(247 - frac * (247 - 8))
    g = round(251 - frac * (251 - 48))
    b = round(255 - frac * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def sweep_svg(trace, selected=None, title="Threshold sweep objective"):
    """Heat-map of the objective over ``(t1, t2)``; infeasible cells are grey."""
    if not trace:
        raise PlotInputError("empty sweep trace")
    t1s = sorted({r["t1"] for r in trace})
    t2s = sorted({r["t2"] for r in trace})
    vals = [r["objective"] for r in trace if r["objective"] is not None and math.isfinite(r["objective"])]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    size = 440
    cw = size / len(t1s)
    ch = size / len(t2s)
    i1 = {t: i for i, t in enumerate(t1s)}
    i2 = {t: i for i, t in enumerate(t2s)}
    width, height = LEFT + size + 110, TOP + size + 50
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for r in trace:
        x = LEFT + cw * i1[r["t1"]]
        y = TOP + size - ch * (i2[r["t2"]] + 1)
        v = r["objective"]
        fill = _color_scale(v, lo, hi) if v is not None and math.isfinite(v) else "#cccccc"
        out.append(f'<rect class="cell" x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" fill="{fill}"/>')
    if selected is not None and selected[0] in i1 and selected[1] in i2:
        x = LEFT + cw * i1[selected[0]]
        y = TOP + size - ch * (i2[selected[1]] + 1)
        out.append(
            f'<rect class="selected" x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" '
            f'fill="none" stroke="red" stroke-width="2"/>'
        )
    out.append(f'<text x="{LEFT + size / 2:.1f}" y="{TOP + size + 30}" text-anchor="middle">t1 (mm2): {t1s[0]:g} to {t1s[-1]:g}</text>')
    out.append(
        f'<text x="20" y="{TOP + size / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 20 {TOP + size / 2:.1f})">t2 (mm2): {t2s[0]:g} to {t2s[-1]:g}</text>'
    )
    lx = LEFT + size + 20
    for k in range(11):
        v = lo + (hi - lo) * (10 - k) / 10
        out.append(f'<rect x="{lx}" y="{TOP + 20 * k}" width="16" height="20" fill="{_color_scale(v, lo, hi)}"/>')
    out.append(f'<text x="{lx + 20}" y="{TOP + 12}">{hi:.4g}</text>')
    out.append(f'<text x="{lx + 20}" y="{TOP + 212}">{lo:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(text, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def scatter_svg(x, y, title="", x_label="reference", y_label="engine"):
    """Paired-value scatter with the identity line (calibration plot)."""
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    if len(x) != len(y):
        raise PlotInputError("x and y differ in length")
    if not x:
        raise PlotInputError("nothing to plot")
    hi = max(max(x), max(y)) * 1.05 or 1.0
    size = 360
    width, height = LEFT + size + RIGHT, TOP + size + 50

    def px(v):
        return LEFT + size * v / hi

    def py(v):
        return TOP + size * (1.0 - v / hi)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + size}" x2="{LEFT + size}" y2="{TOP + size}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + size}" stroke="black"/>',
        f'<line class="identity" x1="{_f(px(0))}" y1="{_f(py(0))}" x2="{_f(px(hi))}" y2="{_f(py(hi))}" '
        'stroke="#999999" stroke-dasharray="4 3"/>',
    ]
    for t in _nice_ticks(hi, 5):
        out.append(f'<text x="{_f(px(t))}" y="{TOP + size + 16}" text-anchor="middle">{t:g}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_f(py(t) + 4)}" text-anchor="end">{t:g}</text>')
    for a, b in zip(x, y):
        out.append(f'<circle class="point" cx="{_f(px(a))}" cy="{_f(py(b))}" r="3" fill="{PALETTE[0]}"/>')
    out.append(f'<text x="{LEFT + size / 2:.1f}" y="{TOP + size + 34}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="16" y="{TOP + size / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + size / 2:.1f})">{escape(y_label)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
