"""Aerial scene parsing: hierarchical tile classification, multi-scale
fusion, class-agnostic segmentation, and region-vote semantic maps."""

__version__ = "0.1.0"
