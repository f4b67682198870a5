"""Graph generation with a latent diffusion prior over node vectors."""

__version__ = "0.1.0"
