"""Command-line entry point and utility scripts."""
