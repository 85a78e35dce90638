"""Multi-task, multi-instance classification of document attributes."""

__version__ = "0.1.0"
