"""Synthetic benchmark, baselines, metrics, file formats and the command line."""
