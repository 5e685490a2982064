"""Critical multitype Galton-Watson processes with countably many types."""

__version__ = "0.1.0"
