"""synthweave: indicator-guided synthetic text generation pipeline."""

__version__ = "0.1.0"
