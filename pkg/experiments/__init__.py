"""Experiment configuration, runs and the image-reconstruction demo."""
