"""Convolutional sentence classifier used to score style transfer accuracy."""
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..corpus import PAD, Vocabulary
from ..errors import InvalidArgument


def _tokens(s):
    return s.split() if isinstance(s, str) else list(s)


@dataclass
class TextCNNConfig:
    vocab_size: int
    embed_dim: int = 64
    kernels: tuple = (3, 4, 5)
    filters: int = 100
    dropout: float = 0.5

    def __post_init__(self):
        self.kernels = tuple(self.kernels)


class TextCNN(nn.Module):
    def __init__(self, config: TextCNNConfig):
        super().__init__()
        self.config = c = config
        self.embed = nn.Embedding(c.vocab_size, c.embed_dim, padding_idx=PAD)
        self.convs = nn.ModuleList(nn.Conv1d(c.embed_dim, c.filters, k) for k in c.kernels)
        self.dropout = nn.Dropout(c.dropout)
        self.head = nn.Linear(c.filters * len(c.kernels), 1)

    def forward(self, token_ids):
        x = self.embed(token_ids).transpose(1, 2)
        short = max(self.config.kernels) - x.shape[-1]
        if short > 0:
            x = F.pad(x, (0, short))
        pooled = [torch.relu(conv(x)).max(dim=-1).values for conv in self.convs]
        return self.head(self.dropout(torch.cat(pooled, dim=-1))).squeeze(-1)


class TransferClassifier:
    """A trained binary style classifier with its own vocabulary.

    ``predict_proba`` returns P(label = 1) for each sentence.
    """

    def __init__(self, model: TextCNN, vocab: Vocabulary, val_accuracy=None, meta=None):
        self.model = model
        self.vocab = vocab
        self.val_accuracy = val_accuracy
        self.meta = dict(meta or {})

    def _encode(self, sentences):
        seqs = [self.vocab.encode(_tokens(s)) or [PAD] for s in sentences]
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = torch.tensor(s)
        return ids

    def predict_proba(self, sentences, batch_size: int = 256) -> np.ndarray:
        sentences = list(sentences)
        self.model.eval()
        out = []
        with torch.no_grad():
            for k in range(0, len(sentences), batch_size):
                out.append(torch.sigmoid(self.model(self._encode(sentences[k:k + batch_size]))))
        return torch.cat(out).double().numpy() if out else np.zeros(0)

    def predict(self, sentences) -> np.ndarray:
        return (self.predict_proba(sentences) >= 0.5).astype(int)

    def state(self):
        return {"config": asdict(self.model.config), "weights": self.model.state_dict(),
                "vocab": self.vocab.id_to_token, "val_accuracy": self.val_accuracy, "meta": self.meta}

    @classmethod
    def from_state(cls, state):
        model = TextCNN(TextCNNConfig(**state["config"]))
        model.load_state_dict(state["weights"])
        return cls(model, Vocabulary(list(state["vocab"]), min_count=1), state["val_accuracy"], state["meta"])

    def save(self, path):
        torch.save(self.state(), path)

    @classmethod
    def load(cls, path):
        return cls.from_state(torch.load(path, weights_only=True))


def train_classifier(sentences, labels, epochs: int = 10, seed: int = 0, val_fraction: float = 0.1,
                     batch_size: int = 64, lr: float = 1e-3, config: dict = None) -> TransferClassifier:
    """Train on a random (1 - val_fraction) share and report held-out accuracy.

    With fewer than 10 examples there is no validation split and
    ``val_accuracy`` is None.
    """
    sentences = [_tokens(s) for s in sentences]
    labels = np.asarray(labels, dtype=int)
    if len(sentences) != len(labels) or not sentences:
        raise InvalidArgument("need equally many (nonzero) sentences and labels")
    if not set(np.unique(labels)) <= {0, 1}:
        raise InvalidArgument("labels must be 0 or 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sentences))
    n_val = int(round(len(sentences) * val_fraction)) if len(sentences) >= 10 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]

    counts = Counter(t for i in train_idx for t in sentences[i])
    vocab = Vocabulary.from_counts(counts, min_count=1)
    torch.manual_seed(seed)
    model = TextCNN(TextCNNConfig(vocab_size=len(vocab), **(config or {})))
    clf = TransferClassifier(model, vocab)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    y = torch.tensor(labels, dtype=torch.float32)
    for _ in range(epochs):
        model.train()
        train_idx = train_idx[rng.permutation(len(train_idx))]
        for k in range(0, len(train_idx), batch_size):
            idx = train_idx[k:k + batch_size]
            logits = model(clf._encode([sentences[i] for i in idx]))
            loss = F.binary_cross_entropy_with_logits(logits, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    if n_val:
        pred = clf.predict([sentences[i] for i in val_idx])
        clf.val_accuracy = float((pred == labels[val_idx]).mean())
    return clf


def transfer_accuracy(classifier: TransferClassifier, sentences, target_labels, mode: str = "threshold") -> float:
    """Fraction of sentences assigned to their target style.

    ``mode="probability"`` averages the classifier's probability of the
    target label instead of thresholding at 0.5.
    """
    sentences = list(sentences)
    if not sentences:
        raise InvalidArgument("no sentences to score")
    target = np.asarray(target_labels, dtype=int)
    if target.ndim == 0:
        target = np.full(len(sentences), int(target))
    if len(target) != len(sentences):
        raise InvalidArgument("one target label per sentence required")
    p1 = classifier.predict_proba(sentences)
    if mode == "threshold":
        return float(((p1 >= 0.5).astype(int) == target).mean())
    if mode == "probability":
        return float(np.where(target == 1, p1, 1.0 - p1).mean())
    raise InvalidArgument(f"unknown accuracy mode {mode!r}")
