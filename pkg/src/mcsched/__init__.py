"""Multicast scheduling over multiple channels with distribution-embedded PPO."""

__version__ = "0.1.0"
