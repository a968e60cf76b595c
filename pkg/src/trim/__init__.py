"""Content-aware image triangulation and quasi-conformal landmark registration."""

__version__ = "0.1.0"
