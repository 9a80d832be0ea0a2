"""Synthetic cardiac-MR motion artefacts, LV localisation and curriculum-trained classifiers."""

__version__ = "0.1.0"
