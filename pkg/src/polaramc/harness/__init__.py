"""Experiment orchestration: datasets, sweeps, convergence and fading experiments."""
