"""PGM image grids and metrics CSV files."""
