"""
Database schema for the experiment run registry.
Uses SQLAlchemy ORM for database abstraction.
"""

from datetime import datetime
from sqlalchemy import (
    create_engine,
    Column,
    Integer,
    String,
    Float,
    DateTime,
    ForeignKey,
    Text,
)
from sqlalchemy.orm import declarative_base, sessionmaker, relationship
import os
from dotenv import load_dotenv

load_dotenv()

Base = declarative_base()


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    run_id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    name = Column(String, nullable=False, index=True)
    data_range = Column(String, nullable=False, index=True)  # "reals", "positives", "unit"
    decoder = Column(String, nullable=False, index=True)  # "dpbn" or "aec"
    nodes = Column(String, nullable=False)  # e.g. "48,24"
    l2_weight = Column(Float, default=0.0)
    seed = Column(Integer, nullable=False)
    epochs = Column(Integer, nullable=False)
    restarts = Column(Integer, default=0)
    train_mse = Column(Float)
    test_mse = Column(Float)
    train_efficiency = Column(Float)
    test_efficiency = Column(Float)
    model_path = Column(String)
    metrics_path = Column(String)
    grid_path = Column(String)
    config_yaml = Column(Text, nullable=False)

    epoch_metrics = relationship(
        "EpochMetric", back_populates="run", cascade="all, delete-orphan"
    )


class EpochMetric(Base):
    __tablename__ = "epoch_metrics"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.run_id"), nullable=False, index=True)
    epoch = Column(Integer, nullable=False)
    split = Column(String, nullable=False)  # "train" or "test"
    mse = Column(Float)
    sampling_efficiency = Column(Float)
    seconds = Column(Float)

    run = relationship("ExperimentRun", back_populates="epoch_metrics")


DEFAULT_DATABASE_URL = "sqlite:///runs/runs.db"


def registry_url(database_url=None):
    """Explicit URL, else DPBN_DATABASE_URL, else runs/runs.db."""
    return database_url or os.getenv("DPBN_DATABASE_URL", DEFAULT_DATABASE_URL)


def get_engine(database_url=None):
    """
    Engine for the run registry.

    For SQLite file URLs the parent directory is created if missing.
    """
    url = registry_url(database_url)
    if url.startswith("sqlite:///") and url != "sqlite:///:memory:":
        parent = os.path.dirname(url[len("sqlite:///") :])
        if parent:
            os.makedirs(parent, exist_ok=True)
    return create_engine(url)


def init_db(database_url=None):
    """Create the registry tables if they do not exist yet."""
    engine = get_engine(database_url)
    Base.metadata.create_all(engine)
    return engine


def get_session(engine=None):
    """Open a session on the registry (default engine when none is given)."""
    return sessionmaker(bind=engine or get_engine())()


if __name__ == "__main__":
    # Initialize database when run directly
    print("Initializing run registry schema...")
    engine = init_db()
    print(f"Database initialized at: {engine.url}")
