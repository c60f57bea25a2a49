import os
import logging
from typing import Optional
from pydantic import BaseModel
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

__version__ = "0.4.0"

# Bumped whenever the manifest layout changes
MANIFEST_SCHEMA_VERSION = 1


class Settings(BaseModel):
    database_url: Optional[str] = None
    jobs: int = 1
    out_dir: str = "results"
    log_level: str = "INFO"


def get_settings() -> Settings:
    """Read process settings from the environment (and a .env file if present)"""
    load_dotenv()
    jobs = os.getenv("KKSIM_JOBS")
    try:
        jobs_value = int(jobs) if jobs else 1
    except ValueError:
        logger.warning(f"Ignoring non-integer KKSIM_JOBS={jobs!r}")
        jobs_value = 1
    return Settings(
        database_url=os.getenv("KKSIM_DATABASE_URL"),
        jobs=max(1, jobs_value),
        out_dir=os.getenv("KKSIM_OUT_DIR", "results"),
        log_level=os.getenv("KKSIM_LOG_LEVEL", "INFO").upper(),
    )
