"""Ingestion module for MNIST IDX files and the gaussianification pipeline."""
