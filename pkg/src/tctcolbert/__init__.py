"""Pooled dense retrieval distilled from a late-interaction teacher, at desk scale."""

__version__ = "0.1.0"
