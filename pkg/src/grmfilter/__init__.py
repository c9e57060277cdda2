"""Rubric-guided GRM filtering for collecting agent fine-tuning trajectories."""

__version__ = "0.1.0"
