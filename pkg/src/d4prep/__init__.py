"""Single-measurement-layer preparation of D4 and Q8 topological order on small tori."""

__version__ = "0.1.0"
