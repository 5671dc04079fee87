"""Exact PB allocation rules, flip-bribery counting and robustness experiments."""

__version__ = "0.1.0"
