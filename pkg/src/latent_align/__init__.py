"""Latent alignment models (CTC and Imputer) for non-autoregressive transduction."""

__version__ = "0.1.0"
