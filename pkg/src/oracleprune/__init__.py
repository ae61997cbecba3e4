"""Channel pruning of small CNNs with constituent saliency metrics and a myopic oracle."""

__version__ = "0.1.0"
