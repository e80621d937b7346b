"""Kaplan-Meier curves, the log-rank test and Cox regression."""

from .cox import (
    CoxFit,
    CoxFitError,
    CoxRankError,
    CoxSpec,
    MonotoneLikelihoodError,
    NotConvergedError,
    PartialLikelihood,
    cox_fit,
    hazard_ratio_table,
)
from .km import SurvivalCurve, kaplan_meier, product_limit
from .logrank import LogRankResult, UndefinedStatisticError, logrank_test

__all__ = [
    "CoxFit",
    "CoxFitError",
    "CoxRankError",
    "CoxSpec",
    "LogRankResult",
    "MonotoneLikelihoodError",
    "NotConvergedError",
    "PartialLikelihood",
    "SurvivalCurve",
    "UndefinedStatisticError",
    "cox_fit",
    "hazard_ratio_table",
    "kaplan_meier",
    "logrank_test",
    "product_limit",
]
