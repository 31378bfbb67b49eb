"""Natural-language driven structural health monitoring agents."""

__version__ = "0.1.0"
