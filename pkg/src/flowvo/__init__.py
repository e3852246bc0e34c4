"""Descriptor-free RGB-D visual odometry front-end."""

__version__ = "0.1.0"
