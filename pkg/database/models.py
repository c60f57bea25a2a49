from sqlalchemy import Column, Integer, String, ForeignKey, DateTime, Float, Text, JSON
from sqlalchemy.orm import relationship
from datetime import datetime
from .database import Base


class SweepRun(Base):
    __tablename__ = "sweep_runs"

    id = Column(Integer, primary_key=True, index=True)
    scenario_name = Column(String, nullable=False, index=True)
    scheme = Column(String, nullable=False)
    axis_name = Column(String, nullable=False)
    base_seed = Column(Integer, nullable=False)
    n_runs = Column(Integer, nullable=False)
    toolkit_version = Column(String)
    wall_time_s = Column(Float, default=0.0)
    csv_path = Column(Text)
    manifest_path = Column(Text)
    csv_sha256 = Column(String)
    timing = Column(JSON, default=dict)
    created_at = Column(DateTime, default=datetime.utcnow)

    rows = relationship("SweepRowRecord", back_populates="run", cascade="all, delete-orphan",
                        order_by="SweepRowRecord.id")


class SweepRowRecord(Base):
    __tablename__ = "sweep_rows"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey('sweep_runs.id'), index=True)
    axis_value = Column(Float, nullable=False)
    bias_or_lo_ratio = Column(Float, nullable=False)
    scheme = Column(String, nullable=False)
    sideband = Column(String, default="-")
    polarization = Column(String, default="-")
    n_bits = Column(Integer, default=0)
    n_errors = Column(Integer, default=0)
    ber = Column(Float, default=0.0)
    min_phase_violations = Column(Integer, default=0)
    clip_count = Column(Integer, default=0)

    run = relationship("SweepRun", back_populates="rows")
