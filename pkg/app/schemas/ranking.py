"""Ranking schemas."""

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class RankingRow(BaseModel):
    """Percentile measures for one centre.

    ``crude_pct`` is None for predictive rankings, which have no crude
    estimate for the predicted year.
    """

    model_config = ConfigDict(frozen=True)

    centre_id: str
    crude_pct: Optional[float] = Field(None, gt=0, lt=100)
    ebe_pct: float = Field(..., gt=0, lt=100)
    er: float = Field(..., ge=1)
    pcer: float = Field(..., gt=0, lt=100)
    epc: float = Field(..., ge=0, le=100)


class RankabilityReport(BaseModel):
    """Rankability RA = 12 var(EPC) / 100^2."""

    model_config = ConfigDict(frozen=True)

    ra: float = Field(..., ge=0)
    n: int
    variance_convention: Literal["population"] = "population"
