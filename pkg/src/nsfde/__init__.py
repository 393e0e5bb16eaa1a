"""Simulation and stability analysis for neutral stochastic delay equations
driven by Hilbert-valued fractional Brownian motion and Poisson jumps."""

__version__ = "0.1.0"
