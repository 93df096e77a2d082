import psutil
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


def _default_threads() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count(logical=True) or 1


class Settings(BaseSettings):
    THREADS: int = Field(default_factory=_default_threads, ge=1)
    LOG_LEVEL: str = Field(default="INFO")

    model_config = SettingsConfigDict(env_prefix="DROPLAB_", env_file=".env", extra="ignore")


settings = Settings()
