"""
Evaluation Harness

테스트 코호트의 각 개체에 대해 관측을 예측용/평가용으로 반씩 나누고,
예측용 관측으로 조건화한 궤적을 평가용 나이에서 비교합니다 (RMSE, CIC-95).
"""

from typing import Any, Dict, List, Mapping, Optional, Tuple
import json
import math
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.core.concurrency import run_all
from src.core.config import HpMode, HpStrategy
from src.core.exceptions import ConfigError, DataError
from src.core.services.metrics_service import get_metrics_service
from src.data.cohort import FLOAT_FORMAT, Cohort, Individual, Observation
from src.data.splits import derive_seed, prediction_evaluation_split
from src.evaluation.metrics import covered_count, rmse
from src.magma.model import TrainedModel
from src.magma.prediction import predict_trajectory

# Configure logging
logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = "magma-evaluation/1"
REPORT_COLUMNS = ["case", "prediction", "evaluation", "rmse", "cic95"]
CASE_CURVE_COLUMNS = ["age_years", "mean", "lower95", "upper95", "value", "role"]
CASE_CURVE_POINTS = 100
UNWEIGHTED_ROW = "mean_unweighted"
POOLED_ROW = "mean_pooled"


class CaseResult(BaseModel):
    """RMSE and coverage of one test individual"""

    model_config = ConfigDict(frozen=True)

    case_id: str
    n_prediction: int = Field(ge=1)
    n_evaluation: int = Field(ge=1)
    rmse: float = Field(ge=0)
    cic95: float = Field(ge=0, le=1)
    n_covered: int = Field(ge=0)
    hp_strategy: Optional[str] = None

    @model_validator(mode="after")
    def _consistent(self) -> "CaseResult":
        if not math.isfinite(self.rmse):
            raise ValueError("rmse must be finite")
        if self.n_covered > self.n_evaluation:
            raise ValueError("n_covered exceeds n_evaluation")
        return self


class EvaluationReport(BaseModel):
    """Per-case rows plus unweighted / pooled aggregates"""

    model_config = ConfigDict(frozen=True)

    per_case: List[CaseResult]
    mean_rmse_unweighted: float
    mean_rmse_pooled: float
    overall_cic95: float
    hp_mode: HpMode
    seed: int
    hp_strategy: HpStrategy = HpStrategy.AUTO
    skipped: List[Dict[str, Any]] = Field(default_factory=list)

    @classmethod
    def from_cases(
        cls,
        cases: List[CaseResult],
        hp_mode: HpMode,
        seed: int,
        hp_strategy: HpStrategy = HpStrategy.AUTO,
        skipped: Optional[List[Dict[str, Any]]] = None
    ) -> "EvaluationReport":
        """
        Aggregates: unweighted mean of RMSE, pooled sqrt(Σ n·rmse² / Σ n),
        overall coverage = covered points / evaluation points
        """
        if not cases:
            raise DataError("no evaluable test individuals")
        ordered = sorted(cases, key=lambda c: c.case_id)
        n_eval = np.array([c.n_evaluation for c in ordered], dtype=float)
        errors = np.array([c.rmse for c in ordered])
        return cls(
            per_case=ordered,
            mean_rmse_unweighted=float(np.mean(errors)),
            mean_rmse_pooled=float(math.sqrt(np.sum(n_eval * errors ** 2) / np.sum(n_eval))),
            overall_cic95=sum(c.n_covered for c in ordered) / int(np.sum(n_eval)),
            hp_mode=hp_mode,
            seed=seed,
            hp_strategy=hp_strategy,
            skipped=list(skipped or [])
        )

    def to_frame(self) -> pd.DataFrame:
        """Case rows followed by the unweighted and pooled aggregate rows"""
        rows = [[c.case_id, c.n_prediction, c.n_evaluation, c.rmse, c.cic95] for c in self.per_case]
        n_prediction = sum(c.n_prediction for c in self.per_case)
        n_evaluation = sum(c.n_evaluation for c in self.per_case)
        rows.append([UNWEIGHTED_ROW, n_prediction, n_evaluation, self.mean_rmse_unweighted, self.overall_cic95])
        rows.append([POOLED_ROW, n_prediction, n_evaluation, self.mean_rmse_pooled, self.overall_cic95])
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self) -> str:
        return self.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def to_document(
        self,
        model_digest: Optional[str] = None,
        run_config: Optional[Dict[str, Any]] = None
    ) -> Dict[str, Any]:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "hp_mode": self.hp_mode.value,
            "hp_strategy": self.hp_strategy.value,
            "seed": self.seed,
            "model_sha256": model_digest,
            "per_case": [c.model_dump() for c in self.per_case],
            "mean_rmse_unweighted": self.mean_rmse_unweighted,
            "mean_rmse_pooled": self.mean_rmse_pooled,
            "overall_cic95": self.overall_cic95,
            "skipped": list(self.skipped),
            "run_config": dict(run_config or {})
        }

    def to_json(self, model_digest: Optional[str] = None, run_config: Optional[Dict[str, Any]] = None) -> str:
        return json.dumps(self.to_document(model_digest, run_config), indent=2, allow_nan=False) + "\n"


def _case_split(individual: Individual, seed: int) -> Tuple[List[Observation], List[Observation]]:
    return prediction_evaluation_split(individual, derive_seed(seed, "evaluation-split", individual.id))


def evaluate_case(
    model: TrainedModel,
    individual: Individual,
    seed: int,
    strategy: HpStrategy = HpStrategy.AUTO
) -> CaseResult:
    """
    한 개체 평가

    분할 seed 는 derive_seed(seed, "evaluation-split", id) 로, 다른 개체 구성과 무관합니다.
    평가 구간은 관측 노이즈(σ*²)를 포함한 예측 구간입니다.
    """
    prediction_obs, evaluation_obs = _case_split(individual, seed)
    eval_ages = np.array([o.age for o in evaluation_obs])
    eval_values = np.array([o.value for o in evaluation_obs])

    prediction = predict_trajectory(
        model, prediction_obs, eval_ages, strategy=strategy, individual_id=individual.id
    ).with_observation_noise()

    covered = covered_count(prediction.lower95, prediction.upper95, eval_values)
    return CaseResult(
        case_id=individual.id,
        n_prediction=len(prediction_obs),
        n_evaluation=len(evaluation_obs),
        rmse=rmse(prediction.mean, eval_values),
        cic95=covered / len(evaluation_obs),
        n_covered=covered,
        hp_strategy=prediction.hp_strategy
    )


def evaluate_test_set(
    model: TrainedModel,
    test: Cohort,
    seed: int,
    strategy: HpStrategy = HpStrategy.AUTO,
    n_jobs: int = 1
) -> EvaluationReport:
    """
    테스트 세트 평가

    관측이 2개 미만인 개체는 경고 후 건너뛰고 report.skipped 에 기록합니다.
    결과 행은 case id 순으로 정렬되므로 코호트 순서와 무관합니다.

    Args:
        model: 학습된 모델
        test: 테스트 코호트
        seed: 평가 seed
        strategy: 테스트 개체 HP 결정 방식
        n_jobs: 동시 평가 case 수

    Returns:
        EvaluationReport: 평가 리포트
    """
    metrics = get_metrics_service()
    skipped: List[Dict[str, Any]] = []
    eligible: List[Individual] = []
    for individual in sorted(test.individuals, key=lambda i: i.id):
        if individual.n_observations < 2:
            logger.warning(
                f"Skipping test individual {individual.id}: "
                f"{individual.n_observations} observation(s), at least 2 required"
            )
            skipped.append({"id": individual.id, "reason": "fewer than 2 observations"})
            metrics.record_case("skipped")
            continue
        eligible.append(individual)

    outcomes = run_all(
        lambda ind: evaluate_case(model, ind, seed, strategy),
        eligible,
        n_jobs,
        expected=()
    )
    cases = []
    for outcome in outcomes:
        metrics.record_case("evaluated")
        cases.append(outcome)

    report = EvaluationReport.from_cases(cases, model.hp_mode, seed, HpStrategy(strategy), skipped)
    logger.info(
        f"Evaluated {len(cases)} test individuals ({len(skipped)} skipped): "
        f"RMSE unweighted={report.mean_rmse_unweighted:.4f}, pooled={report.mean_rmse_pooled:.4f}, "
        f"CIC-95={report.overall_cic95:.4f}"
    )
    return report


def case_curve(
    model: TrainedModel,
    individual: Individual,
    seed: int,
    strategy: HpStrategy = HpStrategy.AUTO,
    n_points: int = CASE_CURVE_POINTS
) -> pd.DataFrame:
    """
    한 테스트 개체의 예측 곡선과 예측용/평가용 관측

    evaluate_case 와 같은 분할과 HP 를 사용하며, 구간은 CIC-95 가 판정하는
    관측 노이즈 포함 구간입니다. 관측 나이는 곡선 행에 합쳐지고 role 로 표시됩니다.

    Returns:
        pd.DataFrame: age_years, mean, lower95, upper95, value, role (curve / prediction / evaluation)
    """
    if n_points < 2:
        raise ConfigError(f"n_points must be >= 2, got {n_points}")
    prediction_obs, evaluation_obs = _case_split(individual, seed)
    ages = individual.ages
    targets = np.union1d(np.linspace(ages.min(), ages.max(), n_points), ages)

    prediction = predict_trajectory(
        model, prediction_obs, targets, strategy=strategy, individual_id=individual.id
    ).with_observation_noise()

    frame = prediction.to_frame()[["age_years", "mean", "lower95", "upper95"]].copy()
    values = np.full(targets.size, np.nan)
    roles = np.full(targets.size, "curve", dtype=object)
    for role, observations in (("prediction", prediction_obs), ("evaluation", evaluation_obs)):
        for observation in observations:
            position = int(np.searchsorted(targets, observation.age))
            values[position] = observation.value
            roles[position] = role
    frame["value"] = values
    frame["role"] = roles
    return frame


def case_curves(
    model: TrainedModel,
    test: Cohort,
    seed: int,
    strategy: HpStrategy = HpStrategy.AUTO,
    n_jobs: int = 1,
    n_points: int = CASE_CURVE_POINTS
) -> Dict[str, pd.DataFrame]:
    """case id -> case_curve frame for every test individual the evaluation scores"""
    eligible = [i for i in sorted(test.individuals, key=lambda i: i.id) if i.n_observations >= 2]
    frames = run_all(
        lambda ind: case_curve(model, ind, seed, strategy, n_points),
        eligible,
        n_jobs,
        expected=()
    )
    return {individual.id: frame for individual, frame in zip(eligible, frames)}


def case_curve_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def compare_reports(reports: Mapping[str, EvaluationReport]) -> pd.DataFrame:
    """
    여러 모델의 평가 리포트를 case 별로 나란히 배치

    Returns:
        pd.DataFrame: case, prediction, evaluation, rmse_<label>, cic95_<label>, ...
    """
    if not reports:
        raise DataError("compare needs at least one report")
    labels = list(reports)
    case_sets = {label: [c.case_id for c in reports[label].per_case] for label in labels}
    reference = case_sets[labels[0]]
    mismatched = [label for label in labels if case_sets[label] != reference]
    if mismatched:
        raise DataError(f"reports {mismatched} cover different test cases than {labels[0]!r}")

    merged = reports[labels[0]].to_frame()[["case", "prediction", "evaluation"]].copy()
    for label in labels:
        frame = reports[label].to_frame()
        merged[f"rmse_{label}"] = frame["rmse"].to_numpy()
        merged[f"cic95_{label}"] = frame["cic95"].to_numpy()
    return merged


def report_from_json(text: str) -> EvaluationReport:
    """
    평가 리포트 JSON 역직렬화

    Raises:
        ConfigError: JSON/스키마 오류
    """
    try:
        document = json.loads(text)
        if document.get("format_version") != REPORT_FORMAT_VERSION:
            raise ConfigError(f"unsupported report format {document.get('format_version')!r}")
        fields = {k: document[k] for k in EvaluationReport.model_fields if k in document}
        return EvaluationReport.model_validate(fields)
    except (json.JSONDecodeError, AttributeError) as e:
        raise ConfigError(f"Invalid evaluation report: {e}")
    except ValidationError as e:
        raise ConfigError(f"Invalid evaluation report: {e.errors()[0]['msg']}")
