"""Class-transition-tracking pseudo-label guidance for SSL with non-random missing labels."""

__version__ = "0.1.0"
