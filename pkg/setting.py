# setting.py
import os
from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="PIMDC_",
        env_file=".env",  # automatically load from .env file
        case_sensitive=True,
        extra="ignore",
    )

    # Core
    THREADS: int = 0  # 0 = auto (os.cpu_count())
    LOG_LEVEL: str = "warning"  # debug | info | warning | error

    # Config files
    ARRAY_SIZES_PATH: str = "config/array_sizes.json"

    # Monte Carlo defaults
    DEFAULT_TRIALS: int = 100
    DEFAULT_SEED: int = 0

    # Counts above this are reported as overflow
    MAX_COUNT: int = 2**63 - 1


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def get_thread_count(override: Optional[int] = None) -> int:
    """Resolve the worker count: explicit override, then THREADS, then cpu count."""
    threads = override if override is not None else get_settings().THREADS
    if threads and threads > 0:
        return threads
    return os.cpu_count() or 1
