"""Sentence-gestalt recurrent transformer: data pipeline, model, training, evaluation."""

__version__ = "0.1.0"
