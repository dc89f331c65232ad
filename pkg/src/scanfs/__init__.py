"""Scanning single-agent reinforcement-learning feature selection."""

__version__ = "0.1.0"
