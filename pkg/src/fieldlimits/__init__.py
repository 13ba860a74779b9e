"""Clarity limits for spatiotemporal GP field estimation under random sensing."""

__version__ = "0.1.0"
