"""Process-sequence prediction with a write-protected dual-controller memory network."""

__version__ = "0.1.0"
