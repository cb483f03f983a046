"""Travel-time estimation with a wide-deep-recurrent regressor whose link
embeddings are shaped by an auxiliary triangle loss over speed-profile
similarity, plus the synthetic data, evaluation and CLI around it."""

__version__ = "0.1.0"
