"""Discrete-event simulator for back-off based per-hop data gathering in urban VANETs."""

__version__ = "0.1.0"
