"""Generalized regularized dual averaging: optimizer, limit dynamics, and Monte-Carlo bands."""

__version__ = "0.1.0"
