"""Homomorphic SVM inference on an intermittently powered in-memory accelerator."""

__version__ = "0.1.0"
