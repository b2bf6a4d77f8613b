"""Consistency assessment of Big Five questionnaire answers from chat models."""

__version__ = "0.1.0"
