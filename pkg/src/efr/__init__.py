"""Instigator-based emotion flip reasoning with the TGIF model."""

__version__ = "0.1.0"
