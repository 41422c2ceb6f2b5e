"""Fundus image classification and Grad-CAM localization, built on numpy."""

__version__ = "0.1.0"
