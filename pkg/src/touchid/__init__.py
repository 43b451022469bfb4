"""End-to-end user identification from raw touchscreen strokes."""

__version__ = "0.1.0"
