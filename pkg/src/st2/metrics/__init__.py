"""Automatic evaluation: BLEU, Kneser-Ney perplexity, classifier accuracy, latent separation."""
from .bleu import bleu, self_bleu
from .classifier import TransferClassifier, train_classifier, transfer_accuracy
from .embeddings import (EmbeddingTable, export_embeddings, read_embeddings_csv, separation_score,
                         write_embeddings_csv)
from .lm import KneserNeyBigramLM, UniformLM, perplexity, train_kn_lm
from .report import MetricReport, average_reports, report_schema

__all__ = [
    "bleu", "self_bleu", "TransferClassifier", "train_classifier", "transfer_accuracy",
    "EmbeddingTable", "export_embeddings", "read_embeddings_csv", "separation_score",
    "write_embeddings_csv", "KneserNeyBigramLM", "UniformLM", "perplexity", "train_kn_lm",
    "MetricReport", "average_reports", "report_schema",
]
