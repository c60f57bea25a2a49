from sqlalchemy.orm import Session
from sqlalchemy import func
from typing import List, Optional, Tuple
from datetime import datetime
from database.models import SweepRun, SweepRowRecord


class SweepRepository:
    def __init__(self, db: Session):
        self.db = db

    def get_by_id(self, run_id: int) -> Optional[SweepRun]:
        return self.db.query(SweepRun).filter(SweepRun.id == run_id).first()

    def record_run(self, run_data: dict, rows: List[dict]) -> SweepRun:
        """Store a run and its rows in one transaction"""
        run = SweepRun(created_at=datetime.utcnow(), **run_data)
        run.rows = [SweepRowRecord(**row) for row in rows]
        self.db.add(run)
        self.db.commit()
        self.db.refresh(run)
        return run

    def get_by_scenario(self, scenario_name: str) -> List[SweepRun]:
        return (
            self.db.query(SweepRun)
            .filter(SweepRun.scenario_name == scenario_name)
            .order_by(SweepRun.created_at.desc(), SweepRun.id.desc())
            .all()
        )

    def latest(self, scenario_name: str) -> Optional[SweepRun]:
        runs = self.get_by_scenario(scenario_name)
        return runs[0] if runs else None

    def delete_run(self, run_id: int) -> bool:
        """Remove a run and its rows"""
        run = self.get_by_id(run_id)
        if not run:
            return False

        self.db.delete(run)
        self.db.commit()
        return True

    def scenario_summary(self) -> List[Tuple[str, int, int, float]]:
        """(scenario, runs, total bits, total wall time) ordered by run count"""
        bits = (
            self.db.query(SweepRowRecord.run_id, func.sum(SweepRowRecord.n_bits).label("bits"))
            .group_by(SweepRowRecord.run_id)
            .subquery()
        )
        return (
            self.db.query(
                SweepRun.scenario_name,
                func.count(SweepRun.id),
                func.coalesce(func.sum(bits.c.bits), 0),
                func.coalesce(func.sum(SweepRun.wall_time_s), 0.0),
            )
            .outerjoin(bits, bits.c.run_id == SweepRun.id)
            .group_by(SweepRun.scenario_name)
            .order_by(func.count(SweepRun.id).desc())
            .all()
        )
