"""Contact-tracing protocol simulator and privacy attack suite."""

__version__ = "0.1.0"
