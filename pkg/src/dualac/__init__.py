"""Dual actor-critic: saddle-point RL from the Bellman LP dual, with exact tabular oracles."""

__version__ = "0.1.0"
