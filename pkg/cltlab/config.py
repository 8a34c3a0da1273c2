"""
Configuration management using Pydantic Settings.
Loads environment variables (prefix CLTLAB_) and an optional .env file.
"""

from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Library and CLI settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="CLTLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "cltlab"
    APP_VERSION: str = "0.1.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_DIR: Optional[str] = None  # File logging only when set

    # Monte Carlo
    SEED: int = 20240611  # Master seed, overridden by CLTLAB_SEED
    WORKERS: int = 1
    MC_BATCH_SIZE: int = 256  # Replications simulated together per work unit

    # Kernel validation and stationary law
    ROW_SUM_TOL: float = 1e-12
    STATIONARY_TOL: float = 1e-12
    DIRECT_SOLVER_MAX_STATES: int = 512
    POWER_ITERATION_BUDGET: int = 1_000_000
    POWER_CACHE_SIZE: int = 256

    # Moments
    CENTERING_TOL: float = 1e-10
    SIGMA_SERIES_TOL: float = 1e-10
    SERIES_BUDGET: int = 1_000_000
    PROFILE_TAIL_TOL: float = 1e-3

    # Bridge
    COMPENSATED_SUM_THRESHOLD: int = 256  # 2**8
    NEGATIVE_VARIANCE_TOL: float = 1e-6
    CLAMP_WARN_TOL: float = 1e-9

    # Exact-mode budgets
    EXACT_MAX_STATES: int = 64
    EXACT_MAX_HORIZON: int = 4096  # 2**12
    ENUMERATION_MAX_STATES: int = 4
    ENUMERATION_MAX_HORIZON: int = 10
    LATTICE_DP_BUDGET: int = 2**34
    MAX_PRODUCT_STATES: int = 4096
    MAX_INTERLACED_STATES: int = 32

    # Verdicts
    CONFIDENCE: float = 0.99
    KS_THRESHOLD: float = 0.02
    VERDICT_TOL: float = 1e-3


# Global settings instance
settings = Settings()
