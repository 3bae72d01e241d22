"""
Settings for the Modal Deformation Control backend.
Values come from DEFORM_* environment variables or an optional .env file.
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import List, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

BACKEND_DIR = Path(__file__).resolve().parent

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


class Settings(BaseSettings):
    """Runtime configuration shared by the API, the CLI and the services."""

    model_config = SettingsConfigDict(
        env_prefix="DEFORM_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    app_name: str = "Modal Deformation Control"
    log_level: str = "INFO"

    # Eigensolver
    dense_eigen_limit: int = Field(default=600, ge=0)
    eigen_shift: float = Field(default=1e-6, gt=0)
    eigen_max_iterations: Optional[int] = Field(default=None, gt=0)
    rigid_mode_tolerance: float = Field(default=1e-6, gt=0)
    degenerate_tolerance: float = Field(default=1e-9, ge=0)

    # Feature projector
    rank_tolerance: float = Field(default=1e-10, gt=0)

    # Modal cache and scenarios
    modal_cache_dir: Optional[Path] = None
    scenario_dir: Path = BACKEND_DIR / "scenarios"
    max_workers: int = Field(default=4, ge=1)

    cors_origins: List[str] = ["http://localhost:3000", "http://127.0.0.1:3000"]


@lru_cache()
def get_settings() -> Settings:
    """Return the process-wide settings instance."""
    return Settings()


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for the API or the CLI."""
    name = (level or get_settings().log_level).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, name, logging.INFO))
