"""Distributionally robust decisions for data from an unknown ergodic Markov chain."""
from __future__ import annotations

__version__ = "0.1.0"
