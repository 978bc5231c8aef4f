"""Layout-independent automatic license plate recognition on CPU."""

__version__ = "0.1.0"
