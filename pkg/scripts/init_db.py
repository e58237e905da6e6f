"""
Initialize the run registry.
Creates the tables defined in db_schema.py.

Usage:
    python scripts/init_db.py [--url sqlite:///runs/runs.db]
"""

import argparse
import sys
import os

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from sqlalchemy import inspect

from db_schema import init_db


def main(argv=None):
    """Initialize the registry database and list its tables."""
    parser = argparse.ArgumentParser(description="Create the experiment run registry")
    parser.add_argument("--url", default=None, help="database URL (default DPBN_DATABASE_URL)")
    args = parser.parse_args(argv)

    print("=" * 60)
    print("Initializing Run Registry")
    print("=" * 60)

    engine = init_db(args.url)
    print(f"\n✓ Registry created at: {engine.url}")

    print("\n✓ Tables created:")
    inspector = inspect(engine)
    for table_name in inspector.get_table_names():
        columns = inspector.get_columns(table_name)
        print(f"  - {table_name} ({len(columns)} columns)")

    print("\n" + "=" * 60)
    print("Registry initialization complete!")
    print("=" * 60)
    print("\nNext steps:")
    print("  1. Run: python scripts/dpbn_cli.py train --config configs/unit_dpbn_1layer.yaml")
    print("  2. Compare: python scripts/results_report.py")


if __name__ == "__main__":
    main()
