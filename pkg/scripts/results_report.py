"""
Summarize the run registry as D-PBN vs AEC comparison tables.

For every (data range, depth, l2 weight) cell the report shows the test MSE of
the best D-PBN and AEC runs and their ratio. Ratios below 1 mean the D-PBN
decoder reconstructs better.

Usage:
    python scripts/results_report.py [--db sqlite:///runs/runs.db] [--csv out.csv]
"""

import argparse
import os
import sys

import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from db_schema import ExperimentRun, get_engine

RANGE_ORDER = ["reals", "positives", "unit"]


def load_runs(engine) -> pd.DataFrame:
    """All registered runs as a DataFrame, with depth derived from the node list."""
    runs = pd.read_sql(ExperimentRun.__table__.select(), engine)
    if runs.empty:
        return runs
    runs["depth"] = runs["nodes"].str.split(",").str.len()
    return runs


def comparison_table(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Best test MSE per decoder for each (range, depth, nodes, l2) cell.

    Returns:
        DataFrame with columns range, depth, nodes, l2_weight, dpbn, aec, ratio
    """
    keys = ["data_range", "depth", "nodes", "l2_weight"]
    best = runs.groupby(keys + ["decoder"])["test_mse"].min().unstack("decoder")
    for col in ("dpbn", "aec"):
        if col not in best.columns:
            best[col] = float("nan")
    table = best[["dpbn", "aec"]].reset_index()
    table["ratio"] = table["dpbn"] / table["aec"]
    table["data_range"] = pd.Categorical(table["data_range"], RANGE_ORDER, ordered=True)
    return table.sort_values(keys).reset_index(drop=True).rename(columns={"data_range": "range"})


def main():
    parser = argparse.ArgumentParser(description="D-PBN vs AEC comparison tables")
    parser.add_argument("--db", default=None, help="registry URL (default DPBN_DATABASE_URL)")
    parser.add_argument("--csv", default=None, help="also write the table to this file")
    args = parser.parse_args()

    engine = get_engine(args.db)
    runs = load_runs(engine)
    print("=" * 60)
    print(f"RESULTS ({engine.url})")
    print("=" * 60)
    if runs.empty:
        print("No runs registered yet. Train with: dpbn train --config configs/<name>.yaml")
        return

    print(f"Registered runs: {len(runs)}")
    table = comparison_table(runs)
    for depth, part in table.groupby("depth"):
        print(f"\n{depth}-layer networks (test MSE):")
        print("-" * 60)
        print(part.drop(columns="depth").to_string(index=False, float_format="%.4g"))
    if args.csv:
        table.to_csv(args.csv, index=False)
        print(f"\n✓ Saved to: {args.csv}")
    print("=" * 60)


if __name__ == "__main__":
    main()
