"""Hard-selection aspect-based sentiment analysis at desk scale."""

__version__ = "0.1.0"
