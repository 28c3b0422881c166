"""Strategy synthesis for deceiver/infiltrator games with partial observability."""

__version__ = "0.1.0"
