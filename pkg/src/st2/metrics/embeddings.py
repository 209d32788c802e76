"""Latent-space export and a silhouette-based separation score."""
import csv
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import silhouette_score

from ..corpus import Batch
from ..errors import DegenerateGeometry, InvalidArgument


@dataclass
class EmbeddingTable:
    style: np.ndarray  # [N, d_style]
    content: np.ndarray  # [N, d_content]
    labels: np.ndarray  # [N]

    def __len__(self):
        return len(self.labels)


def export_embeddings(model, params, sequences, labels, batch_size: int = 256) -> EmbeddingTable:
    """Style and content vectors for every sentence, in input order."""
    sequences, labels = list(sequences), np.asarray(labels, dtype=int)
    if len(sequences) != len(labels):
        raise InvalidArgument("one label per sentence required")
    style, content = [], []
    for k in range(0, len(sequences), batch_size):
        batch = Batch.from_sequences(sequences[k:k + batch_size], labels[k:k + batch_size].tolist())
        s, c = model.call(params, "embeddings", batch)
        style.append(s.double().numpy())
        content.append(c.double().numpy())
    if not style:
        return EmbeddingTable(np.zeros((0, 0)), np.zeros((0, 0)), labels)
    return EmbeddingTable(np.concatenate(style), np.concatenate(content), labels)


def write_embeddings_csv(table: EmbeddingTable, path):
    """Rows ``vector_kind,label,dim0..dimN``; the shorter kind leaves trailing cells empty."""
    width = max(table.style.shape[1], table.content.shape[1]) if len(table) else 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["vector_kind", "label"] + [f"dim{i}" for i in range(width)])
        for kind, mat in (("style", table.style), ("content", table.content)):
            for vec, label in zip(mat, table.labels):
                cells = [repr(float(x)) for x in vec]
                w.writerow([kind, int(label)] + cells + [""] * (width - len(cells)))


def read_embeddings_csv(path) -> EmbeddingTable:
    rows = {"style": [], "content": []}
    labels = {"style": [], "content": []}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            kind = row[0]
            rows[kind].append([float(x) for x in row[2:] if x != ""])
            labels[kind].append(int(row[1]))
    return EmbeddingTable(np.array(rows["style"]), np.array(rows["content"]), np.array(labels["style"]))


def separation_score(vectors, labels) -> float:
    """Mean silhouette coefficient (Euclidean) of the labelled points."""
    x = np.asarray(vectors, dtype=float)
    labels = np.asarray(labels)
    n_labels = len(np.unique(labels))
    if x.ndim != 2 or len(x) != len(labels):
        raise InvalidArgument("vectors must be [N, d] with one label per row")
    if n_labels < 2 or n_labels >= len(x):
        raise DegenerateGeometry("silhouette needs 2 <= #labels < #points")
    if np.allclose(x, x[0]):
        raise DegenerateGeometry("all points coincide")
    return float(silhouette_score(x, labels, metric="euclidean"))
