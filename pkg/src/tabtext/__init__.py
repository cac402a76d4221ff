"""Serialize tabular data to text, curate it, and benchmark text classifiers against tabular baselines."""

__version__ = "0.1.0"
