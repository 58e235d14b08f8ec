"""Anomaly detection over large fleets of seasonal campaign metrics."""

__version__ = "0.1.0"
