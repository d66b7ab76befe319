"""
Configuration settings for the d2dce-lab backend.
Environment variables and process-level settings.
"""
from functools import lru_cache
from typing import Literal

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings from environment variables (and an optional .env)."""

    app_name: str = "d2dce-lab"

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_dir: str = "./logs"
    log_to_file: bool = False

    # Caps worker threads used by ablation cells (env: D2DCE_THREADS)
    d2dce_threads: int = 1

    # Output
    default_out_dir: str = "./runs"

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_level(cls, value):
        return value.upper() if isinstance(value, str) else value

    @field_validator("d2dce_threads")
    @classmethod
    def _positive_threads(cls, value: int) -> int:
        if value < 1:
            raise ValueError("D2DCE_THREADS must be >= 1")
        return value


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
