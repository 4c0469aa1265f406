"""Attribution-driven daily budget allocation for insertion orders."""

__version__ = "0.1.0"
