"""Constrained uniform top-k sampling, Mixed-CUTS rollouts and a GRPO toy lab."""

__version__ = "0.1.0"
