#!/usr/bin/env python
"""
Summary of recorded sweeps per scenario.
Run from project root with: python -m scripts.run_stats
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from database.database import SessionLocal
from database.init_db import init_db
from repositories.sweep_repository import SweepRepository


def get_run_stats():
    """Print runs, simulated bits and wall time by scenario"""
    init_db()
    db = SessionLocal()
    try:
        result = SweepRepository(db).scenario_summary()
        total_runs = sum(count for _, count, _, _ in result)

        print(f"\n{'=' * 50}")
        print(f"SWEEP STATISTICS - TOTAL RUNS: {total_runs}")
        print(f"{'=' * 50}")
        print(f"{'SCENARIO':<14} | {'RUNS':<6} | {'BITS':<12} | {'WALL [s]':<8}")
        print(f"{'-' * 14} | {'-' * 6} | {'-' * 12} | {'-' * 8}")

        for name, count, bits, wall in result:
            print(f"{name:<14} | {count:<6} | {int(bits):<12} | {wall:.1f}")

        print(f"{'=' * 50}\n")

    finally:
        db.close()


if __name__ == "__main__":
    get_run_stats()
