"""Survival analysis of breast arterial calcification (BAC) and cardiovascular events.

The package covers cohort ingestion and MACE endpoint construction, BAC
severity classes, Cox regression, Kaplan-Meier curves and the log-rank test,
the pooled cohort ASCVD equations, BAC threshold selection, the baseline
comparison tests and a seeded simulator with known hazard ratios.
"""

__version__ = "0.1.0"

from .ascvd import AscvdInputs, AscvdRangeError, RiskCategory, ascvd_score, categorize_risk
from .bac import SeverityClass, SeverityThresholds, classify_severity, log2_bac
from .cohort import Endpoint, assemble_cohort, build_time_to_event, parse_cohort, parse_diagnoses
from .simulate import SimConfig, simulate_cohort
from .survival import CoxSpec, cox_fit, kaplan_meier, logrank_test
from .thresholds import SweepConfig, sweep_thresholds

__all__ = [
    "AscvdInputs",
    "AscvdRangeError",
    "CoxSpec",
    "Endpoint",
    "RiskCategory",
    "SeverityClass",
    "SeverityThresholds",
    "SimConfig",
    "SweepConfig",
    "ascvd_score",
    "assemble_cohort",
    "build_time_to_event",
    "categorize_risk",
    "classify_severity",
    "cox_fit",
    "kaplan_meier",
    "log2_bac",
    "logrank_test",
    "parse_cohort",
    "parse_diagnoses",
    "simulate_cohort",
    "sweep_thresholds",
]
