"""Simulated tactile palpation of wave objects and latent-filter property inference."""

__version__ = "0.1.0"
