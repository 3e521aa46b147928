"""Pytest configuration and fixtures."""

from typing import Callable, List, Sequence

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from app.schemas.prior import PosteriorSummary
from app.schemas.stage1 import CrudeEffect


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running simulation suites")


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data."""
    return np.random.default_rng(20240601)


@pytest.fixture
def make_crudes() -> Callable[..., List[CrudeEffect]]:
    """Build one year's crude effects from arrays."""

    def factory(theta: Sequence[float], s2: Sequence[float], year: int = 1995) -> List[CrudeEffect]:
        s2 = np.broadcast_to(np.asarray(s2, dtype=float), (len(theta),))
        return [
            CrudeEffect(centre_id=f"C{i + 1:03d}", year=year, theta_hat=float(t), s2=float(v))
            for i, (t, v) in enumerate(zip(theta, s2))
        ]

    return factory


@pytest.fixture
def make_posteriors() -> Callable[..., List[PosteriorSummary]]:
    """Build posteriors with shrinkage 0.5 from means and variances."""

    def factory(ebe: Sequence[float], pv: Sequence[float]) -> List[PosteriorSummary]:
        return [
            PosteriorSummary(centre_id=f"C{i + 1:03d}", ebe=float(m), pv=float(v), shrinkage=0.5)
            for i, (m, v) in enumerate(zip(ebe, pv))
        ]

    return factory


@pytest.fixture
def patients(rng) -> pd.DataFrame:
    """Patient table: 8 centres, 2 years, one covariate, small centre effects."""
    rows = []
    effects = rng.normal(0.0, 0.3, size=8)
    for i, effect in enumerate(effects):
        for year in (1994, 1995):
            n = 150
            x2 = rng.standard_normal(n)
            prob = expit(-1.0 + 0.8 * x2 + effect)
            outcome = (rng.random(n) < prob).astype(int)
            rows.append(
                pd.DataFrame(
                    {
                        "centre_id": f"C{i + 1:03d}",
                        "year": year,
                        "outcome": outcome,
                        "x1": 1.0,
                        "x2": x2,
                    }
                )
            )
    return pd.concat(rows, ignore_index=True)
