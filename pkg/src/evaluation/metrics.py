"""
Evaluation Metrics

RMSE, 95% credible interval coverage (CIC-95), normative band coverage.
"""

from typing import Dict, Sequence
import math

import numpy as np

from src.core.exceptions import DomainError
from src.data.normative import NormativeBand


def _paired(*vectors: Sequence[float]):
    arrays = [np.asarray(v, dtype=float).reshape(-1) for v in vectors]
    if len({a.size for a in arrays}) != 1:
        raise DomainError(f"length mismatch: {[a.size for a in arrays]}")
    if arrays[0].size == 0:
        raise DomainError("metrics need at least one point")
    return arrays


def rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """sqrt(mean((predicted - actual)^2))"""
    p, a = _paired(predicted, actual)
    return float(math.sqrt(np.mean((p - a) ** 2)))


def covered_count(lower: Sequence[float], upper: Sequence[float], actual: Sequence[float]) -> int:
    """Points with lower <= actual <= upper (closed interval)"""
    lo, hi, a = _paired(lower, upper, actual)
    if np.any(lo > hi):
        raise DomainError("lower bound exceeds upper bound")
    return int(np.sum((lo <= a) & (a <= hi)))


def cic95(lower: Sequence[float], upper: Sequence[float], actual: Sequence[float]) -> float:
    """Fraction of actual values inside their 95% credible interval"""
    covered = covered_count(lower, upper, actual)
    return covered / np.asarray(actual).reshape(-1).size


def band_coverage(prediction, band: NormativeBand) -> Dict[str, float]:
    """
    예측 곡선의 normative band 포함 비율

    Returns:
        Dict: mean_in_band (평균이 band 안), interval_in_band (95% 구간 전체가 band 안)

    Raises:
        BandSpanError: target 이 band 범위 밖
    """
    if prediction.targets.size == 0:
        raise DomainError("band coverage needs at least one target")
    lower, upper = band.interpolate(prediction.targets)
    mean_in = (lower <= prediction.mean) & (prediction.mean <= upper)
    interval_in = (lower <= prediction.lower95) & (prediction.upper95 <= upper)
    return {
        "mean_in_band": float(np.mean(mean_in)),
        "interval_in_band": float(np.mean(interval_in))
    }
