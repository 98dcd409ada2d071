"""submarkets - community detection and submarket statistics for messaging networks."""

__version__ = "0.1.0"
