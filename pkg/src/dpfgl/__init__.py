"""Frequency-perception detector with guided few-shot adaptation, on numpy."""

__version__ = "0.1.0"
