"""Calibration-aware Bayesian neural networks."""
