"""
Cohort / Normative Band Unit Tests
"""

import logging

import numpy as np
import pytest

from src.core.exceptions import BandSpanError, CohortParseError, DataError
from src.data.cohort import (
    Cohort,
    make_individual,
    parse_cohort_csv,
    parse_observations_csv,
    serialize_cohort_csv
)
from src.data.normative import parse_normative_band_csv
from tests.conftest import build_cohort


class TestParseCohort:
    """Cohort CSV 파싱"""

    def test_groups_rows_by_patient_and_sorts_ages(self):
        text = (
            "patient_id,age_years,value\n"
            "P1,10.5,300\n"
            "P2,6,250.5\n"
            "P1,4.25,280\n"
        )
        cohort = parse_cohort_csv(text)
        assert cohort.ids == ["P1", "P2"]
        np.testing.assert_array_equal(cohort.get("P1").ages, [4.25, 10.5])
        np.testing.assert_array_equal(cohort.get("P1").values, [280.0, 300.0])
        assert cohort.get("P2").n_observations == 1

    def test_duplicate_age_rows_are_averaged_with_warning(self, caplog):
        text = "patient_id,age_years,value\nP1,5,100\nP1,5,110\nP1,7,120\n"
        with caplog.at_level(logging.WARNING):
            cohort = parse_cohort_csv(text)
        np.testing.assert_array_equal(cohort.get("P1").values, [105.0, 120.0])
        assert "averaging" in caplog.text

    def test_byte_order_mark_is_ignored(self):
        cohort = parse_cohort_csv("\ufeffpatient_id,age_years,value\nP1,5,1\n".encode("utf-8"))
        assert cohort.ids == ["P1"]

    def test_non_numeric_field_reports_row(self):
        text = "patient_id,age_years,value\nP1,5,1\nP1,six,2\n"
        with pytest.raises(CohortParseError) as info:
            parse_cohort_csv(text)
        assert info.value.row == 3
        assert "row 3" in str(info.value)

    def test_negative_value_reports_row(self):
        with pytest.raises(CohortParseError) as info:
            parse_cohort_csv("patient_id,age_years,value\nP1,5,-1\n")
        assert info.value.row == 2

    @pytest.mark.parametrize("age", ["0", "130", "nan", "inf"])
    def test_age_outside_open_range(self, age):
        with pytest.raises(CohortParseError):
            parse_cohort_csv(f"patient_id,age_years,value\nP1,{age},1\n")

    def test_wrong_header(self):
        with pytest.raises(CohortParseError) as info:
            parse_cohort_csv("id,age,value\nP1,5,1\n")
        assert info.value.row == 1

    @pytest.mark.parametrize("text", ["", "   \n", "patient_id,age_years,value\n"])
    def test_empty_or_header_only_file(self, text):
        with pytest.raises(CohortParseError):
            parse_cohort_csv(text)

    def test_invalid_utf8(self):
        with pytest.raises(CohortParseError):
            parse_cohort_csv(b"patient_id,age_years,value\nP\xff,5,1\n")

    def test_parse_errors_are_data_errors(self):
        assert issubclass(CohortParseError, DataError)
        assert CohortParseError("x").exit_code == 2

    def test_serialize_then_parse_is_identical(self, small_cohort):
        restored = parse_cohort_csv(serialize_cohort_csv(small_cohort))
        assert restored == small_cohort


class TestParseObservations:
    """단일 개체 관측 파일"""

    def test_header_only_gives_no_observations(self):
        assert parse_observations_csv("patient_id,age_years,value\n") == (None, [])

    def test_empty_file_gives_no_observations(self):
        assert parse_observations_csv("") == (None, [])

    def test_single_individual(self):
        individual_id, observations = parse_observations_csv(
            "patient_id,age_years,value\nX,9,3\nX,5,2\n"
        )
        assert individual_id == "X"
        assert [o.age for o in observations] == [5.0, 9.0]

    def test_two_individuals_rejected(self):
        with pytest.raises(DataError):
            parse_observations_csv("patient_id,age_years,value\nX,5,1\nY,6,2\n")


class TestCohortModel:
    """Cohort / Individual 불변 조건"""

    def test_duplicate_ids_rejected(self):
        individual = make_individual("A", [5.0], [1.0])
        with pytest.raises(ValueError):
            Cohort(individuals=(individual, individual))

    def test_empty_cohort_rejected(self):
        with pytest.raises(ValueError):
            Cohort(individuals=())

    def test_unknown_id_is_data_error(self, tiny_cohort):
        with pytest.raises(DataError):
            tiny_cohort.get("Z")

    def test_subset_keeps_cohort_order(self, tiny_cohort):
        assert tiny_cohort.subset(["C", "A"]).ids == ["A", "C"]

    def test_summary_counts(self):
        cohort = build_cohort({"A": ([5.0], [1.0]), "B": ([5.0, 6.0, 7.0], [1.0, 2.0, 3.0])})
        summary = cohort.summarize()
        assert summary["n_individuals"] == 2
        assert summary["n_observations"] == 4
        assert summary["n_singletons"] == 1
        assert summary["max_observations"] == 3

    def test_pooled_arrays(self, tiny_cohort):
        assert tiny_cohort.all_ages.size == 8
        assert tiny_cohort.all_values.size == 8


class TestNormativeBand:
    """Normative band 파싱과 보간"""

    def test_linear_interpolation(self):
        band = parse_normative_band_csv("age_years,lower,upper\n5,10,20\n15,20,40\n")
        lower, upper = band.interpolate([5.0, 10.0, 15.0])
        np.testing.assert_allclose(lower, [10.0, 15.0, 20.0])
        np.testing.assert_allclose(upper, [20.0, 30.0, 40.0])

    def test_outside_span(self):
        band = parse_normative_band_csv("age_years,lower,upper\n5,10,20\n15,20,40\n")
        with pytest.raises(BandSpanError):
            band.interpolate([16.0])

    def test_lower_above_upper(self):
        with pytest.raises(CohortParseError):
            parse_normative_band_csv("age_years,lower,upper\n5,30,20\n15,20,40\n")

    def test_single_knot(self):
        with pytest.raises(CohortParseError):
            parse_normative_band_csv("age_years,lower,upper\n5,10,20\n")
