"""Simulation laboratory for critical branching processes in random environment
with heavy-tailed (stable-domain) associated random walks."""

__version__ = "0.1.0"
