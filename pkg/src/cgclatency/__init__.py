"""Saddlepoint latency analysis for closed-loop goal-oriented communication."""

__version__ = "0.1.0"
