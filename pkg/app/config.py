"""Application configuration using Pydantic Settings."""

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
    )

    # Stage 1 (patient-level logistic model)
    MIN_INFORMATION: float = 1e-6
    IRLS_MAX_ITER: int = 100
    IRLS_SCORE_TOL: float = 1e-8
    IRLS_LOGLIK_TOL: float = 1e-10
    SEPARATION_ETA_BOUND: float = 50.0

    # Univariate empirical Bayes
    EM_TOL: float = 1e-10
    EM_MAX_ITER: int = 10_000
    EM_INIT_FLOOR: float = 0.001

    # Longitudinal models
    PANEL_EM_TOL: float = 1e-8
    PANEL_EM_MAX_ITER: int = 20_000
    PROFILE_XTOL: float = 1e-5
    PROFILE_RHO_BOUND: float = 0.999

    # Reporting
    CONFIDENCE_LEVEL: float = 0.95
    OUTPUT_SIGNIFICANT_DIGITS: int = 6

    # Worker Configuration
    MAX_CONCURRENT_STRATA: int = 4

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"
    LOG_JSON: bool = True

    # Application
    APP_NAME: str = "Centre Profiling"
    APP_VERSION: str = "1.0.0"


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
