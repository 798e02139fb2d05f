"""Adversarial imitation learning with a diffusion-loss discriminator,
benchmarked against a vanilla adversarial baseline on small analytic
control environments."""

__version__ = "0.1.0"
