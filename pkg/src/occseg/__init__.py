"""Occlusion-aware multi-region segmentation of depth images with a learned shape prior."""

__version__ = "0.1.0"
