"""BAC area quantification and severity classification."""

from dataclasses import dataclass
from enum import IntEnum
import math

import numpy as np


class SeverityClass(IntEnum):
    """Ordered BAC severity levels with a stable 0..3 encoding."""

    NoBAC = 0
    Mild = 1
    Moderate = 2
    Severe = 3

    @property
    def label(self):
        return {0: "No BAC", 1: "Mild", 2: "Moderate", 3: "Severe"}[int(self)]


@dataclass(frozen=True)
class MaskSummary:
    """Pixel count of a binary segmentation mask plus its pixel spacing (mm)."""

    positive_pixel_count: int
    pixel_spacing_row: float
    pixel_spacing_col: float

    def __post_init__(self):
        if self.positive_pixel_count < 0:
            raise ValueError("positive_pixel_count must be non-negative")
        if not (self.pixel_spacing_row > 0 and self.pixel_spacing_col > 0):
            raise ValueError("pixel spacings must be positive")


@dataclass(frozen=True)
class SeverityThresholds:
    """Cut-points (mm^2) separating the four severity classes.

    Intervals are half-open: NoBAC is ``[0, noise_floor)``, Mild is
    ``[noise_floor, mild_upper)``, Moderate is ``[mild_upper, moderate_upper)``
    and Severe is ``[moderate_upper, inf)``.
    """

    noise_floor: float = 2.0
    mild_upper: float = 10.0
    moderate_upper: float = 40.0

    def __post_init__(self):
        if not (0 < self.noise_floor < self.mild_upper < self.moderate_upper):
            raise ValueError(
                "thresholds must satisfy 0 < noise_floor < mild_upper < moderate_upper, "
                f"got ({self.noise_floor}, {self.mild_upper}, {self.moderate_upper})"
            )

    @property
    def edges(self):
        return (self.noise_floor, self.mild_upper, self.moderate_upper)


DEFAULT_THRESHOLDS = SeverityThresholds()


def area_from_mask(summary):
    """BAC area in mm^2: segmented pixel count times the physical pixel area."""
    return summary.positive_pixel_count * summary.pixel_spacing_row * summary.pixel_spacing_col


def classify_severity(bac_area, thresholds=DEFAULT_THRESHOLDS):
    """Map a BAC area (mm^2) to its :class:`SeverityClass`."""
    if bac_area < 0 or math.isnan(bac_area):
        raise ValueError(f"BAC area must be non-negative, got {bac_area}")
    if bac_area < thresholds.noise_floor:
        return SeverityClass.NoBAC
    if bac_area < thresholds.mild_upper:
        return SeverityClass.Mild
    if bac_area < thresholds.moderate_upper:
        return SeverityClass.Moderate
    return SeverityClass.Severe


def classify_severity_array(bac_area, thresholds=DEFAULT_THRESHOLDS):
    """Vectorized :func:`classify_severity` returning integer codes 0..3."""
    bac_area = np.asarray(bac_area, dtype=float)
    if np.any(~(bac_area >= 0)):
        raise ValueError("BAC areas must be non-negative")
    return np.searchsorted(np.asarray(thresholds.edges), bac_area, side="right").astype(np.int64)


def log2_bac(bac_area):
    """Continuous exposure ``log2(bac + 1)``; one unit is a doubling of ``bac + 1``.

    Accepts scalars or arrays.
    """
    arr = np.asarray(bac_area, dtype=float)
    if np.any(~(arr >= 0)):
        raise ValueError("BAC areas must be non-negative")
    out = np.log2(arr + 1.0)
    return float(out) if out.ndim == 0 else out
