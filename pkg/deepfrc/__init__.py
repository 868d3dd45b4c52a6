"""Joint registration and classification of functional data."""

__version__ = "0.1.0"

_PACKAGE_NAME = "deepfrc"
