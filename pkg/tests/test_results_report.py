"""
Unit tests for scripts/results_report.py
Run with: python -m pytest tests/test_results_report.py -v
"""

import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

from db_schema import ExperimentRun, get_session, init_db
from scripts.results_report import comparison_table, load_runs


def add_run(session, data_range, decoder, nodes, test_mse, l2=0.0):
    session.add(
        ExperimentRun(
            name=f"{data_range}_{decoder}_{nodes}",
            data_range=data_range,
            decoder=decoder,
            nodes=nodes,
            l2_weight=l2,
            seed=0,
            epochs=1,
            test_mse=test_mse,
            config_yaml="{}",
        )
    )


def test_comparison_table(tmp_path):
    engine = init_db(f"sqlite:///{tmp_path / 'runs.db'}")
    session = get_session(engine)
    add_run(session, "unit", "dpbn", "24", 0.02)
    add_run(session, "unit", "dpbn", "24", 0.01)
    add_run(session, "unit", "aec", "24", 0.04)
    add_run(session, "reals", "aec", "48,24", 0.5)
    session.commit()
    session.close()

    runs = load_runs(engine)
    assert len(runs) == 4
    assert sorted(runs["depth"].unique()) == [1, 2]

    table = comparison_table(runs)
    assert list(table.columns) == ["range", "depth", "nodes", "l2_weight", "dpbn", "aec", "ratio"]
    assert list(table["range"]) == ["reals", "unit"]
    unit = table[table["range"] == "unit"].iloc[0]
    assert unit["dpbn"] == 0.01
    assert abs(unit["ratio"] - 0.25) < 1e-12
    reals = table[table["range"] == "reals"].iloc[0]
    assert np.isnan(reals["dpbn"])


def test_empty_registry(tmp_path):
    engine = init_db(f"sqlite:///{tmp_path / 'empty.db'}")
    assert load_runs(engine).empty
