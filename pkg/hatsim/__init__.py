"""Device-cloud speculative inference simulator."""

__version__ = '0.1.0'
