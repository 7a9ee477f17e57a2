"""Order-generating GANs for e-commerce: embeddings, training, evaluation."""

__version__ = "0.1.0"
