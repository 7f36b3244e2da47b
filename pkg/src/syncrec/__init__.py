"""syncrec: synchronized multi-stream recording for human-robot experiments."""

__version__ = "0.1.0"
