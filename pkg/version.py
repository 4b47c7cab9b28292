"""Project-wide version info for the cooperative driving simulator."""

__version__ = "0.3.0"
