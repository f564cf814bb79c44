"""Multi-stream information fusion trajectory prediction."""

__version__ = "0.1.0"
