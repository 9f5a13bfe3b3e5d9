"""Neural topic modeling with a topic-wise contrastive coherence regularizer."""

__version__ = "0.1.0"
