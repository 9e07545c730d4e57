"""Template estimation in quotient spaces."""

__version__ = "0.1.0"
