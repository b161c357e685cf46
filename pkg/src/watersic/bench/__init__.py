"""Synthetic Gaussian rate-distortion benchmark."""
