"""Birth-and-death dynamics for area-interaction Gibbs point processes."""

__version__ = "0.1.0"
