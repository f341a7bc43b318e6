"""Audit toolbox for image-classification subsystems in mobility applications."""

__version__ = "0.1.0"
