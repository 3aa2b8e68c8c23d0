import os
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Manages toolkit settings using pydantic-settings for robust validation."""
    # Configure pydantic-settings to load from a .env file
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    # Parallelism (None means one worker per logical core)
    MCCO_THREADS: Optional[int] = None

    # Cost guard and untruncated level cap
    MCCO_COST_BUDGET: float = 1e9
    MCCO_LEVEL_CAP: int = 62

    # Trees per work block; also the unit of stream derivation
    MCCO_BLOCK_SIZE: int = 4096
    # Max leaves materialized by one SAA block
    MCCO_LEAF_BUDGET: int = 2 ** 20

    MCCO_LOG_LEVEL: str = "INFO"
    MCCO_OUTPUT_DIR: str = "results"

    def resolved_threads(self, override: Optional[int] = None) -> int:
        """Thread count from an explicit override, the environment, or the core count."""
        threads = override or self.MCCO_THREADS or os.cpu_count() or 1
        return max(1, int(threads))


# Create a single, global instance of the settings object
settings = Settings()
