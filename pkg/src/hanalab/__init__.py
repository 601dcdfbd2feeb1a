"""Self-play laboratory for public-belief agents."""

__version__ = "0.1.0"
