"""
Metrics CSV files.
"""

import logging
from typing import Dict

import pandas as pd

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "split", "mse", "sampling_efficiency", "seconds"]
EVAL_COLUMNS = [
    "train_mse",
    "test_mse",
    "train_sampling_efficiency",
    "test_sampling_efficiency",
]
FLOAT_FORMAT = "%.6g"


def metrics_frame(report) -> pd.DataFrame:
    """History table of a TrainReport (or a DataFrame), restricted to the metric columns."""
    history = report if isinstance(report, pd.DataFrame) else report.history
    if history is None or len(history) == 0:
        return pd.DataFrame(columns=METRIC_COLUMNS)
    missing = [c for c in METRIC_COLUMNS if c not in history.columns]
    if missing:
        raise ValueError(f"report missing columns: {missing}")
    out = history[METRIC_COLUMNS].copy()
    out["epoch"] = out["epoch"].astype(int)
    return out


def write_metrics_csv(report, path: str) -> None:
    """
    Write per-epoch metrics with header `epoch,split,mse,sampling_efficiency,seconds`.

    Floats are written with 6 significant digits.
    """
    frame = metrics_frame(report)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %d metric rows to %s", len(frame), path)


def eval_csv(values: Dict[str, float], header: bool = True) -> str:
    """One data row for the eval command, preceded by the column names unless header=False."""
    frame = pd.DataFrame([{c: values[c] for c in EVAL_COLUMNS}], columns=EVAL_COLUMNS)
    return frame.to_csv(
        index=False, header=header, float_format=FLOAT_FORMAT, lineterminator="\n"
    )


def read_metrics_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path)

