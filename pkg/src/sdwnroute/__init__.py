"""Desk-scale SDWN routing lab: link metrics, traffic prediction, PPO routing."""

__version__ = "0.1.0"
