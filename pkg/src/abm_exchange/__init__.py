"""Artificial exchange: matching engine, market-data feed, agent-based order flow and estimation."""

__version__ = "0.1.0"
