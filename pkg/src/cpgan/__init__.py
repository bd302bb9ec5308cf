"""Face hallucination of non-uniformly lit 16x16 thumbnails with Copy/Paste attention."""

__version__ = "0.1.0"
