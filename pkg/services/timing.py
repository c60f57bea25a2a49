import time
import logging
from datetime import datetime
from typing import Dict, Optional
from functools import wraps

# Configure logging
logger = logging.getLogger(__name__)


class RunTiming:
    """Wall-time bookkeeping for one sweep (or one job inside it)"""

    def __init__(self, name: str, base_seed: Optional[int] = None):
        self.name = name
        self.base_seed = base_seed
        self.start_time = time.time()
        self.end_time = None
        self.stage_time: Dict[str, float] = {}  # Cumulative seconds per stage
        self.stage_calls: Dict[str, int] = {}
        self.markers: Dict[str, float] = {}  # Offsets from start
        self.is_complete = False

    def mark(self, marker_name: str):
        """Mark a specific point in time during the run"""
        self.markers[marker_name] = time.time() - self.start_time

    def add_stage_time(self, stage: str, seconds: float):
        self.stage_time[stage] = self.stage_time.get(stage, 0.0) + seconds
        self.stage_calls[stage] = self.stage_calls.get(stage, 0) + 1

    def merge(self, other: "RunTiming"):
        """Fold a worker's stage totals into this one"""
        for stage, seconds in other.stage_time.items():
            self.stage_time[stage] = self.stage_time.get(stage, 0.0) + seconds
            self.stage_calls[stage] = self.stage_calls.get(stage, 0) + other.stage_calls.get(stage, 0)

    def complete(self):
        self.end_time = time.time()
        self.is_complete = True

    def get_total_time(self) -> float:
        """Total wall time in seconds"""
        end = self.end_time or time.time()
        return end - self.start_time

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "base_seed": self.base_seed,
            "start_time": datetime.fromtimestamp(self.start_time).isoformat(),
            "end_time": datetime.fromtimestamp(self.end_time).isoformat() if self.end_time else None,
            "total_time_ms": round(self.get_total_time() * 1000, 2),
            "stage_time_ms": {k: round(v * 1000, 2) for k, v in self.stage_time.items()},
            "stage_calls": dict(self.stage_calls),
            "markers": {k: round(v * 1000, 2) for k, v in self.markers.items()},
            "is_complete": self.is_complete,
        }


def time_stage(stage: str):
    """Decorator timing a signal-chain stage; pass ``timing=`` to accumulate into a RunTiming"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, timing: Optional[RunTiming] = None, **kwargs):
            start_time = time.time()
            result = func(*args, **kwargs)
            elapsed = time.time() - start_time

            if timing is not None:
                timing.add_stage_time(stage, elapsed)
            else:
                logger.debug(f"Stage {stage} ({func.__name__}) took {elapsed:.4f}s (no run context)")

            return result
        return wrapper
    return decorator
