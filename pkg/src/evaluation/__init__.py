"""
Evaluation protocol: per-case RMSE / CIC-95 and normative band coverage
"""

from src.evaluation.harness import (
    CaseResult,
    EvaluationReport,
    case_curves,
    compare_reports,
    evaluate_test_set
)
from src.evaluation.metrics import band_coverage, cic95, rmse

__all__ = [
    "CaseResult",
    "EvaluationReport",
    "case_curves",
    "compare_reports",
    "evaluate_test_set",
    "band_coverage",
    "cic95",
    "rmse"
]
