"""Trace-driven simulator of clustered federated learning under data drift."""

__version__ = "0.1.0"
