"""Compressed-domain RGBD action recognition with depth-gradient descriptors."""

__version__ = "0.1.0"
