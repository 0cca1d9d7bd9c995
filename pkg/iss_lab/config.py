from functools import lru_cache

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class LabSettings(BaseSettings):
    """Process-wide settings read from ISS_LAB_* environment variables."""
    model_config = SettingsConfigDict(env_prefix="ISS_LAB_")

    OUT: str = "iss_lab_out"
    JOBS: int = 1
    OTLP_ENDPOINT: str = ""
    LOG_LEVEL: str = "INFO"

    @field_validator("JOBS")
    def validate_jobs(cls, value):
        if value < 1:
            raise ValueError("'JOBS' must be a positive worker count")
        return value


@lru_cache()
def get_settings():
    return LabSettings()


SETTINGS = get_settings()
