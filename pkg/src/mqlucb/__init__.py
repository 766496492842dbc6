"""Regret laboratory for monotonic Q-learning with rare, uncertainty-triggered switching."""

__version__ = "0.1.0"
