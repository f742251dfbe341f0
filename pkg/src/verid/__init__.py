"""Speaker verification with a small CNN, Siamese fine-tuning and a GMM-UBM baseline."""

__version__ = "0.1.0"
