"""Non-intrusive P.835 speech quality assessment toolkit."""

__version__ = "0.1.0"
