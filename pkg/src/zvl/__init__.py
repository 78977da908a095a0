"""Value-free recommenders and voting tally simulation."""

__version__ = "0.1.0"
