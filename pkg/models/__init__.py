"""Gradients, training and the binary model container."""
