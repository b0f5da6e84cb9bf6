"""Open-set recognition with contrastive learning and attribution-guided mixing."""

__version__ = "0.1.0"
