"""Label-guided supervised contrastive training for toy text-to-image GANs."""

__version__ = "0.1.0"
