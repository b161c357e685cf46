"""Calibration statistics and covariance blending."""
