"""Unit tests for the D-PBN autoencoder."""
