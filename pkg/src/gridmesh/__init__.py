"""Networked-microgrid scheduling with asynchronous surrogate Lagrangian coordination."""

__version__ = "0.1.0"
