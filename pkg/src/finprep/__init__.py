"""Pretraining-corpus preparation: filtering, deduplication, subword
vocabularies, masked-LM example generation and evaluation metrics."""

__version__ = "0.1.0"
