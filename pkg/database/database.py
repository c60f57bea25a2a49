from sqlalchemy import create_engine
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import sessionmaker
import logging

from services.settings import get_settings

logger = logging.getLogger(__name__)

DEFAULT_SQLITE_URL = "sqlite:///./kksim_runs.db"

# Run registry location
DATABASE_URL = get_settings().database_url

# Ensure we're using the correct dialect name (postgresql, not postgres)
if DATABASE_URL and DATABASE_URL.startswith("postgres://"):
    DATABASE_URL = DATABASE_URL.replace("postgres://", "postgresql://", 1)
    logger.info("Converted postgres:// URL to postgresql://")


def make_engine(url: str = None):
    """Engine for ``url``; a local SQLite file when no URL is configured"""
    if url and not url.startswith("sqlite"):
        return create_engine(url, pool_pre_ping=True)
    if not url:
        logger.debug("No KKSIM_DATABASE_URL found, defaulting to SQLite")
    return create_engine(url or DEFAULT_SQLITE_URL, connect_args={"check_same_thread": False})


engine = make_engine(DATABASE_URL)

# Create a configured "Session" class
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Base class for ORM models
Base = declarative_base()
