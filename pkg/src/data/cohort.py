"""
Cohort Module

종단(longitudinal) 코호트 데이터 타입과 CSV 입출력을 제공합니다.
CSV 형식: header `patient_id,age_years,value`, UTF-8, 소수점 '.'
"""

from typing import Dict, List, Optional, Sequence, Tuple, Union
import io
import math
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.core.exceptions import CohortParseError, DataError

# Configure logging
logger = logging.getLogger(__name__)

COHORT_COLUMNS = ["patient_id", "age_years", "value"]
MAX_AGE = 130.0
FLOAT_FORMAT = "%.17g"


class Observation(BaseModel):
    """One (age, value) measurement"""

    model_config = ConfigDict(frozen=True)

    age: float = Field(gt=0, lt=MAX_AGE)
    value: float = Field(ge=0)

    @field_validator("age", "value")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v


class Individual(BaseModel):
    """Identified subject with age-sorted, age-unique observations"""

    model_config = ConfigDict(frozen=True)

    id: str
    observations: Tuple[Observation, ...]

    @model_validator(mode="after")
    def _sorted_unique(self) -> "Individual":
        if not self.observations:
            raise ValueError(f"individual {self.id} has no observations")
        ages = [o.age for o in self.observations]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValueError(f"individual {self.id}: ages must be strictly increasing")
        return self

    @property
    def ages(self) -> np.ndarray:
        return np.array([o.age for o in self.observations])

    @property
    def values(self) -> np.ndarray:
        return np.array([o.value for o in self.observations])

    @property
    def n_observations(self) -> int:
        return len(self.observations)


class Cohort(BaseModel):
    """Non-empty set of individuals with unique ids"""

    model_config = ConfigDict(frozen=True)

    individuals: Tuple[Individual, ...]

    @model_validator(mode="after")
    def _unique_ids(self) -> "Cohort":
        if not self.individuals:
            raise ValueError("cohort must contain at least one individual")
        ids = [ind.id for ind in self.individuals]
        if len(set(ids)) != len(ids):
            raise ValueError("individual ids must be unique")
        return self

    def __len__(self) -> int:
        return len(self.individuals)

    @property
    def ids(self) -> List[str]:
        return [ind.id for ind in self.individuals]

    def get(self, individual_id: str) -> Individual:
        for ind in self.individuals:
            if ind.id == individual_id:
                return ind
        raise DataError(f"unknown individual {individual_id}", {"id": individual_id})

    def subset(self, ids: Sequence[str]) -> "Cohort":
        """Individuals whose id is in `ids`, in cohort order"""
        wanted = set(ids)
        return Cohort(individuals=tuple(ind for ind in self.individuals if ind.id in wanted))

    @property
    def all_ages(self) -> np.ndarray:
        return np.concatenate([ind.ages for ind in self.individuals])

    @property
    def all_values(self) -> np.ndarray:
        return np.concatenate([ind.values for ind in self.individuals])

    def summarize(self) -> Dict[str, float]:
        """Counts describing the cohort (logged by the CLI)"""
        counts = np.array([ind.n_observations for ind in self.individuals])
        return {
            "n_individuals": int(counts.size),
            "n_observations": int(counts.sum()),
            "median_observations": float(np.median(counts)),
            "min_observations": int(counts.min()),
            "max_observations": int(counts.max()),
            "n_singletons": int(np.sum(counts == 1))
        }


def make_individual(individual_id: str, ages: Sequence[float], values: Sequence[float]) -> Individual:
    """Build an Individual from parallel arrays (sorted by age)"""
    order = np.argsort(np.asarray(ages, dtype=float), kind="stable")
    return Individual(
        id=individual_id,
        observations=tuple(
            Observation(age=float(ages[i]), value=float(values[i])) for i in order
        )
    )


def _read_frame(text: Union[bytes, str]) -> Optional[pd.DataFrame]:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CohortParseError(f"input is not valid UTF-8 ({e})", row=None)
    if not text.strip():
        return None
    text = text.lstrip("\ufeff")
    try:
        return pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise CohortParseError(f"malformed CSV ({e})", row=None)


def _parse_rows(frame: pd.DataFrame) -> Dict[str, Dict[float, List[float]]]:
    if [c.strip() for c in frame.columns] != COHORT_COLUMNS:
        raise CohortParseError(
            f"expected header {','.join(COHORT_COLUMNS)}, got {','.join(map(str, frame.columns))}",
            row=1
        )

    grouped: Dict[str, Dict[float, List[float]]] = {}
    for position, (patient_id, age_text, value_text) in enumerate(frame.itertuples(index=False, name=None)):
        row = position + 2  # header is row 1
        patient_id = str(patient_id).strip()
        if not patient_id:
            raise CohortParseError("empty patient_id", row=row)
        try:
            age = float(age_text)
            value = float(value_text)
        except (TypeError, ValueError):
            raise CohortParseError(f"non-numeric field (age_years={age_text!r}, value={value_text!r})", row=row)
        if not (math.isfinite(age) and math.isfinite(value)):
            raise CohortParseError("non-finite field", row=row)
        if age < 0 or value < 0:
            raise CohortParseError(f"negative age or value (age_years={age}, value={value})", row=row)
        if not 0 < age < MAX_AGE:
            raise CohortParseError(f"age_years {age} outside (0, {MAX_AGE:g})", row=row)
        grouped.setdefault(patient_id, {}).setdefault(age, []).append(value)
    return grouped


def _build_individuals(grouped: Dict[str, Dict[float, List[float]]]) -> List[Individual]:
    individuals = []
    for patient_id, by_age in grouped.items():
        observations = []
        for age in sorted(by_age):
            values = by_age[age]
            if len(values) > 1:
                logger.warning(
                    f"Patient {patient_id}: {len(values)} rows at age {age:g}; averaging values {values}"
                )
            observations.append(Observation(age=age, value=float(np.mean(values))))
        individuals.append(Individual(id=patient_id, observations=tuple(observations)))
    return individuals


def parse_cohort_csv(text: Union[bytes, str]) -> Cohort:
    """
    Cohort CSV 파싱

    patient_id 별로 그룹화하고, 동일 나이의 중복 행은 평균 후 경고를 남깁니다.

    Args:
        text: UTF-8 CSV (bytes 또는 str)

    Returns:
        Cohort: 파싱된 코호트

    Raises:
        CohortParseError: header 누락, 숫자가 아닌 필드, 음수, 빈 파일 (행 번호 포함)
    """
    frame = _read_frame(text)
    if frame is None:
        raise CohortParseError("empty file", row=1)
    grouped = _parse_rows(frame)
    if not grouped:
        raise CohortParseError("no data rows", row=2)
    cohort = Cohort(individuals=tuple(_build_individuals(grouped)))
    logger.info(f"Parsed cohort: {cohort.summarize()}")
    return cohort


def parse_observations_csv(text: Union[bytes, str]) -> Tuple[Optional[str], List[Observation]]:
    """
    Observations of a single individual; an empty or header-only file gives no observations

    Returns:
        Tuple: (patient_id 또는 None, 관측 리스트)
    """
    frame = _read_frame(text)
    if frame is None:
        return None, []
    grouped = _parse_rows(frame)
    if not grouped:
        return None, []
    if len(grouped) > 1:
        raise DataError(f"observations file must describe one individual, found {sorted(grouped)}")
    individual = _build_individuals(grouped)[0]
    return individual.id, list(individual.observations)


def cohort_to_frame(cohort: Cohort) -> pd.DataFrame:
    rows = [
        (ind.id, obs.age, obs.value)
        for ind in cohort.individuals
        for obs in ind.observations
    ]
    return pd.DataFrame(rows, columns=COHORT_COLUMNS)


def serialize_cohort_csv(cohort: Cohort) -> str:
    """Cohort CSV with round-trip float formatting"""
    return cohort_to_frame(cohort).to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
