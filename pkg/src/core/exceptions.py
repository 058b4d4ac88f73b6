"""
Exceptions Module

MAGMA 파이프라인 전체에서 사용하는 예외 계층을 정의합니다.
각 예외는 CLI 종료 코드(exit code)를 함께 가집니다.
"""

from typing import Any, Dict, List, Optional, Sequence


class MagmaError(Exception):
    """Base error for the package"""

    exit_code = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def to_dict(self) -> Dict[str, Any]:
        """Error payload for JSON reports"""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "context": self.context
        }


class ConfigError(MagmaError):
    """Invalid configuration or command-line usage"""

    exit_code = 1


class DataError(MagmaError):
    """Invalid or unusable input data"""

    exit_code = 2


class CohortParseError(DataError):
    """Malformed cohort / band CSV"""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message, {"row": row})
        self.row = row


class SplitInfeasibleError(DataError):
    """Split constraints cannot be met"""


class ExtrapolationError(DataError):
    """Target ages beyond the supported prediction range"""


class GridMembershipError(DataError):
    """Observed age missing from the working grid"""


class BandSpanError(DataError):
    """Target age outside the normative band span"""


class NumericalError(MagmaError):
    """Numerical failure in the GP machinery"""

    exit_code = 3


class NonPSDError(NumericalError):
    """Matrix not positive semi-definite even at maximum jitter"""

    def __init__(self, dimension: int, jitters: Sequence[float], reason: str = "not positive definite"):
        super().__init__(
            f"Cholesky failed for {dimension}x{dimension} matrix ({reason}); "
            f"attempted jitters: {', '.join(f'{j:.3e}' for j in jitters)}",
            {"dimension": dimension, "jitters": list(jitters)}
        )
        self.dimension = dimension
        self.jitters = list(jitters)


class NonFiniteObjectiveError(NumericalError):
    """Objective or gradient evaluated to a non-finite value"""


class OptimizationFailedError(NumericalError):
    """Optimizer gave up after its perturbed restarts"""


class TrainingFailedError(NumericalError):
    """Every training restart failed"""

    def __init__(self, failures: List[Dict[str, Any]]):
        lines = "; ".join(f"restart {f['restart_index']}: {f['message']}" for f in failures)
        super().__init__(f"All {len(failures)} restarts failed ({lines})", {"failures": failures})
        self.failures = failures


class DomainError(DataError, ValueError):
    """Numeric input outside the mathematical domain (NaN, inf, ...)"""
