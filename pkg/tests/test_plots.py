import re

import numpy as np
import pytest

from bacsurv.plots import PlotInputError, StepSeries, km_svg, scatter_svg, sweep_svg
from bacsurv.survival import product_limit


def series(label="all", times=(1.0, 3.0), surv=(0.8, 0.5), ticks=(), counts=()):
    lo = tuple(max(0.0, s - 0.3) for s in surv)
    hi = tuple(min(1.0, s + 0.3) for s in surv)
    return StepSeries(label, times, surv, lo, hi, ticks, counts)


def test_single_stratum_one_step_path():
    svg = km_svg([series()])
    assert svg.count('<path class="step"') == 1
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_four_strata_legend_order():
    labels = ["No BAC", "Mild", "Moderate", "Severe"]
    svg = km_svg([series(lab, surv=(0.9 - 0.1 * i, 0.8 - 0.15 * i)) for i, lab in enumerate(labels)])
    assert svg.count('<path class="step"') == 4
    strokes = re.findall(r'class="step" data-series="\d" d="[^"]*" fill="none" stroke="(#[0-9a-f]+)"', svg)
    assert len(set(strokes)) == 4
    positions = [svg.index(f">{lab}</text>") for lab in labels]
    assert positions == sorted(positions)


def test_band_clamped_to_unit_interval():
    s = StepSeries("x", (1.0,), (0.5,), (-0.4,), (1.7,))
    svg = km_svg([s], y_range=(0.0, 1.0))
    ys = [float(y) for pts in re.findall(r'class="band"[^>]*points="([^"]*)"', svg) for y in re.findall(r",([-\d.]+)", pts)]
    top, bottom = 40, 40 + 260
    assert min(ys) >= top - 1e-9 and max(ys) <= bottom + 1e-9


def test_mismatched_lengths_rejected():
    with pytest.raises(PlotInputError):
        StepSeries("x", (1.0, 2.0), (0.9,), (0.8,), (1.0,))
    with pytest.raises(PlotInputError):
        StepSeries("x", (1.0,), (0.9,), (0.8,), (1.0,), (0.0, 1.0), (10,))
    with pytest.raises(PlotInputError):
        km_svg([])


def test_byte_stable_and_at_risk_table():
    curve = product_limit([100, 400, 800, 1200, 2000], [1, 0, 1, 1, 0])
    s = StepSeries.from_curve(curve, risk_ticks=(0, 2, 4))
    assert s.at_risk == (5, 3, 1)
    a, b = km_svg([s], title="MACE"), km_svg([s], title="MACE")
    assert a == b
    assert a.count('class="at-risk"') == 3


def test_sweep_heatmap_marks_selection():
    trace = [{"t1": 5.0, "t2": 10.0, "objective": 1.0}, {"t1": 5.0, "t2": 15.0, "objective": float("nan")},
             {"t1": 10.0, "t2": 15.0, "objective": 3.0}]
    svg = sweep_svg(trace, selected=(10.0, 15.0))
    assert svg.count('class="cell"') == 3
    assert svg.count('class="selected"') == 1


def test_scatter_identity_line():
    svg = scatter_svg([1.0, 2.0, 5.0], [1.1, 2.0, 4.9])
    assert svg.count('class="point"') == 3 and 'class="identity"' in svg
    with pytest.raises(PlotInputError):
        scatter_svg([1.0], [1.0, 2.0])
