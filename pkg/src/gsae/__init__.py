"""Group-sparse autoencoders: synthetic generative model, training, theory checks, clustering."""

__version__ = "0.1.0"
