"""Federated interlibrary resource-sharing node."""

__version__ = "0.1.0"
