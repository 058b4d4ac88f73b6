"""
Normative Band Module

연령별 참고 범위(normative reference band) 데이터와 CSV 파싱을 제공합니다.
CSV 형식: header `age_years,lower,upper`
"""

from typing import Tuple, Union
import io
import math
import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from src.core.exceptions import BandSpanError, CohortParseError

# Configure logging
logger = logging.getLogger(__name__)

BAND_COLUMNS = ["age_years", "lower", "upper"]


class NormativeBand(BaseModel):
    """Piecewise-linear reference range over age"""

    model_config = ConfigDict(frozen=True)

    knots: Tuple[Tuple[float, float, float], ...]

    @model_validator(mode="after")
    def _valid_knots(self) -> "NormativeBand":
        if len(self.knots) < 2:
            raise ValueError("a normative band needs at least two knots")
        ages = [k[0] for k in self.knots]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValueError("band ages must be strictly increasing")
        for age, lower, upper in self.knots:
            if not all(math.isfinite(v) for v in (age, lower, upper)):
                raise ValueError(f"non-finite knot at age {age}")
            if lower > upper:
                raise ValueError(f"lower > upper at age {age}")
        return self

    @property
    def span(self) -> Tuple[float, float]:
        return self.knots[0][0], self.knots[-1][0]

    def interpolate(self, ages) -> Tuple[np.ndarray, np.ndarray]:
        """
        Linearly interpolated (lower, upper) at the given ages

        Raises:
            BandSpanError: age 가 band 범위를 벗어난 경우
        """
        query = np.asarray(ages, dtype=float).reshape(-1)
        start, stop = self.span
        outside = query[(query < start) | (query > stop)]
        if outside.size:
            raise BandSpanError(
                f"ages {outside.tolist()} outside band span [{start:g}, {stop:g}]",
                {"span": [start, stop]}
            )
        knots = np.asarray(self.knots, dtype=float)
        lower = np.interp(query, knots[:, 0], knots[:, 1])
        upper = np.interp(query, knots[:, 0], knots[:, 2])
        return lower, upper


def parse_normative_band_csv(text: Union[bytes, str]) -> NormativeBand:
    """Parse `age_years,lower,upper` rows (sorted by age after parsing)"""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CohortParseError(f"band file is not valid UTF-8 ({e})", row=None)
    if not text.strip():
        raise CohortParseError("empty band file", row=1)
    try:
        frame = pd.read_csv(io.StringIO(text.lstrip("\ufeff")), dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise CohortParseError(f"malformed band CSV ({e})", row=None)
    if [c.strip() for c in frame.columns] != BAND_COLUMNS:
        raise CohortParseError(f"expected header {','.join(BAND_COLUMNS)}", row=1)

    knots = []
    for position, fields in enumerate(frame.itertuples(index=False, name=None)):
        try:
            knots.append(tuple(float(v) for v in fields))
        except (TypeError, ValueError):
            raise CohortParseError(f"non-numeric band field {fields}", row=position + 2)

    try:
        band = NormativeBand(knots=tuple(sorted(knots)))
    except ValueError as e:
        raise CohortParseError(f"invalid band: {e}", row=None)
    logger.info(f"Loaded normative band with {len(band.knots)} knots over {band.span}")
    return band
