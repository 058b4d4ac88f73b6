"""
Cohort Data

Ingestion, validation, splitting and synthesis of longitudinal cohorts
"""

from src.data.cohort import (
    Cohort,
    Individual,
    Observation,
    make_individual,
    parse_cohort_csv,
    parse_observations_csv,
    serialize_cohort_csv
)
from src.data.normative import NormativeBand, parse_normative_band_csv
from src.data.splits import (
    SplitSpec,
    derive_seed,
    prediction_evaluation_split,
    quasi_random_split
)
from src.data.synthetic import SyntheticCohort, synthesize_cohort

__all__ = [
    "Cohort",
    "Individual",
    "Observation",
    "make_individual",
    "parse_cohort_csv",
    "parse_observations_csv",
    "serialize_cohort_csv",
    "NormativeBand",
    "parse_normative_band_csv",
    "SplitSpec",
    "derive_seed",
    "prediction_evaluation_split",
    "quasi_random_split",
    "SyntheticCohort",
    "synthesize_cohort"
]
