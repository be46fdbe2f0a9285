"""Desk-scale federated-learning model-hijacking laboratory."""

__version__ = "0.1.0"
