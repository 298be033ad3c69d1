"""Hyperspectral/multispectral image fusion with an online teacher-student pair."""

__version__ = "0.1.0"
