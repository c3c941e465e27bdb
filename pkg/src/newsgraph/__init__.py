"""Heterogeneous article-context graph learning: corpus generation,
self-supervised pre-training, fine-tuning, and evaluation."""

__version__ = "0.1.0"
