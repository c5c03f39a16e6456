"""Behavior-aware trajectory autoencoder: generation and prediction of vehicle
trajectories with an interpretable intention / aggressiveness latent space."""

__version__ = "0.1.0"
