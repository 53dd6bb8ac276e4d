"""
SQLAlchemy models for the optional results store.
Designed for SQLite with easy PostgreSQL migration support.
"""

from datetime import datetime
from typing import List, Optional

from sqlalchemy import Boolean, DateTime, Float, ForeignKey, Index, Integer, String, Text
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship
from sqlalchemy.sql import func


class Base(DeclarativeBase):
    """Base class for all models."""
    pass


class Run(Base):
    """One simulated (scenario, framework, seed) point and its summary."""
    __tablename__ = 'runs'

    run_key: Mapped[str] = mapped_column(String(16), primary_key=True)
    framework: Mapped[str] = mapped_column(String, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    params: Mapped[str] = mapped_column(Text, nullable=False, default='{}')
    scenario_json: Mapped[str] = mapped_column(Text, nullable=False)
    log_digest: Mapped[Optional[str]] = mapped_column(String(64), nullable=True)
    requests: Mapped[int] = mapped_column(Integer, nullable=False)
    mean_ttft_s: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    median_ttft_s: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    p90_ttft_s: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    mean_tbt_s: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    prefill_sla_rate: Mapped[float] = mapped_column(Float, nullable=False)
    decode_sla_rate: Mapped[float] = mapped_column(Float, nullable=False)
    sla_vacuous: Mapped[bool] = mapped_column(Boolean, nullable=False, default=False)
    mean_accept_length: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    pd_hit_rate: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=func.now())

    records: Mapped[List["RequestRow"]] = relationship(
        "RequestRow", back_populates="run", cascade="all, delete-orphan"
    )

    __table_args__ = (
        Index('idx_runs_framework', 'framework'),
    )


class RequestRow(Base):
    """Per-request latency record of a run."""
    __tablename__ = 'request_records'

    run_key: Mapped[str] = mapped_column(String(16), ForeignKey('runs.run_key', ondelete='CASCADE'),
                                         primary_key=True)
    request_id: Mapped[int] = mapped_column(Integer, primary_key=True)
    device_id: Mapped[int] = mapped_column(Integer, nullable=False)
    prompt_len: Mapped[int] = mapped_column(Integer, nullable=False)
    chunk_size: Mapped[int] = mapped_column(Integer, nullable=False)
    ttft_ns: Mapped[int] = mapped_column(Integer, nullable=False)
    mean_tbt_ns: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    p99_tbt_ns: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    output_len: Mapped[int] = mapped_column(Integer, nullable=False)
    prefill_ok: Mapped[bool] = mapped_column(Boolean, nullable=False)
    decode_ok: Mapped[bool] = mapped_column(Boolean, nullable=False)

    run: Mapped["Run"] = relationship("Run", back_populates="records")

    __table_args__ = (
        Index('idx_request_records_device', 'device_id'),
    )
