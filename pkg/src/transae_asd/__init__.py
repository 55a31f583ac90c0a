"""Transformer autoencoder with machine-ID constraint for unsupervised anomalous sound detection."""

__version__ = "0.1.0"
