"""Triangle-based photographic composition analysis."""

__version__ = "0.1.0"
