"""Style-pair datasets: vocabulary, task loading, support/query splits, batching.

A dataset root holds one directory per task::

    <root>/<task_id>/a.train.txt    one whitespace-tokenized sentence per line
    <root>/<task_id>/b.train.txt
    <root>/<task_id>/test.tsv       optional: source <TAB> reference <TAB> label
    <root>/<task_id>/meta.json      optional: {"style_a": ..., "style_b": ...}
"""
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .errors import (EmptyCorpus, EmptySplit, InvalidArgument, MalformedTestPair,
                     MissingCorpusFile, UnknownStyle, UnknownTask)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<s>", "</s>", "<unk>")

DEFAULT_SUPPORT_FRACTION = 0.8
DEFAULT_MAX_LEN = 32
DEFAULT_MIN_COUNT = 2


def tokenize(line: str) -> list[str]:
    return line.split()


@dataclass
class Vocabulary:
    id_to_token: list[str]
    min_count: int = DEFAULT_MIN_COUNT
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIALS:
            raise InvalidArgument("vocabulary must start with the four special tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise InvalidArgument("duplicate token in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int], strip: bool = True) -> list[str]:
        """Map ids back to tokens, stopping at EOS and dropping specials when `strip`."""
        out = []
        for i in ids:
            i = int(i)
            if strip:
                if i == EOS:
                    break
                if i in (PAD, BOS):
                    continue
            out.append(self.id_to_token[i])
        return out

    def save(self, path):
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, min_count=DEFAULT_MIN_COUNT):
        tokens = Path(path).read_text(encoding="utf-8").split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens, min_count=min_count)

    @classmethod
    def from_counts(cls, counts: Counter, min_count: int = DEFAULT_MIN_COUNT):
        if min_count < 1:
            raise InvalidArgument("min_count must be >= 1")
        kept = [(t, c) for t, c in counts.items() if c >= min_count and t not in SPECIALS]
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        return cls(list(SPECIALS) + [t for t, _ in kept], min_count=min_count)


def read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise MissingCorpusFile(f"missing corpus file: {path}")
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def build_vocab(corpora, min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Build one vocabulary over a list of text files.

    Tokens are ordered by descending frequency, ties broken lexicographically.
    """
    corpora = list(corpora)
    if not corpora:
        raise EmptyCorpus("no corpus files given")
    counts = Counter()
    for path in corpora:
        for line in read_lines(Path(path)):
            counts.update(tokenize(line))
    return Vocabulary.from_counts(counts, min_count)


def dataset_files(root) -> list[Path]:
    """All training files under a dataset root, in task order."""
    files = []
    for task_dir in task_dirs(root):
        files += [task_dir / "a.train.txt", task_dir / "b.train.txt"]
    return files


def task_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise MissingCorpusFile(f"dataset root not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_dir())


@dataclass(frozen=True)
class StyleTask:
    task_id: str
    style_a: str
    style_b: str
    train_a: tuple
    train_b: tuple
    support_fraction: float
    support_idx: tuple  # (indices into train_a, indices into train_b)
    query_idx: tuple
    test_pairs: tuple = ()  # (source ids, reference ids, source label)

    def __post_init__(self):
        if self.style_a == self.style_b:
            raise InvalidArgument("a task needs two distinct styles")

    def side(self, label: int) -> tuple:
        return self.train_a if label == 0 else self.train_b

    def split(self, name: str, label: int) -> list:
        if name == "train":
            return list(self.side(label))
        if name not in ("support", "query"):
            raise InvalidArgument(f"unknown split {name!r}")
        idx = (self.support_idx if name == "support" else self.query_idx)[label]
        seqs = self.side(label)
        return [seqs[i] for i in idx]

    def style_label(self, style: str) -> int:
        if style == self.style_a:
            return 0
        if style == self.style_b:
            return 1
        raise UnknownStyle(f"style {style!r} not in task {self.task_id} ({self.style_a}, {self.style_b})")


def _split_indices(n, fraction, rng):
    order = rng.permutation(n)
    n_support = int(round(n * fraction))
    n_support = min(max(n_support, 1), n)
    return tuple(sorted(order[:n_support].tolist())), tuple(sorted(order[n_support:].tolist()))


def encode_line(line: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> tuple:
    return tuple(vocab.encode(tokenize(line)[:max_len]))


def parse_test_lines(lines, style_a: str, style_b: str):
    """Parse ``source<TAB>reference<TAB>label`` lines; label is 0/1 or a style name."""
    pairs = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3 or not parts[0].strip() or not parts[1].strip():
            raise MalformedTestPair(lineno)
        label = parts[2].strip()
        if label in ("0", "1"):
            label = int(label)
        elif label == style_a:
            label = 0
        elif label == style_b:
            label = 1
        else:
            raise MalformedTestPair(lineno, f"unknown label {label!r}")
        pairs.append((parts[0], parts[1], label))
    return pairs


def make_task(task_id: str, lines_a, lines_b, vocab: Vocabulary, style_a: str = None, style_b: str = None,
              test_pairs=(), support_fraction: float = DEFAULT_SUPPORT_FRACTION, seed: int = 0,
              max_len: int = DEFAULT_MAX_LEN) -> StyleTask:
    """Build a task from raw sentences; ``test_pairs`` holds (source, reference, label) strings."""
    if not 0.0 < support_fraction < 1.0:
        raise InvalidArgument("support_fraction must lie in (0, 1)")
    sides = []
    for name, lines in (("a", lines_a), ("b", lines_b)):
        lines = [line for line in lines if line.strip()]
        if not lines:
            raise EmptyCorpus(f"task {task_id}: side {name} has no sentences")
        sides.append(tuple(encode_line(line, vocab, max_len) for line in lines))
    rng = np.random.default_rng(seed)
    split_a = _split_indices(len(sides[0]), support_fraction, rng)
    split_b = _split_indices(len(sides[1]), support_fraction, rng)
    test = tuple((encode_line(src, vocab, max_len), encode_line(ref, vocab, max_len), int(label))
                 for src, ref, label in test_pairs)
    return StyleTask(
        task_id=task_id, style_a=style_a or f"{task_id}:a", style_b=style_b or f"{task_id}:b",
        train_a=sides[0], train_b=sides[1], support_fraction=support_fraction,
        support_idx=(split_a[0], split_b[0]), query_idx=(split_a[1], split_b[1]), test_pairs=test)


def load_task_dir(path, vocab: Vocabulary, support_fraction: float = DEFAULT_SUPPORT_FRACTION,
                  seed: int = 0, max_len: int = DEFAULT_MAX_LEN) -> StyleTask:
    path = Path(path)
    lines_a = read_lines(path / "a.train.txt")
    lines_b = read_lines(path / "b.train.txt")
    meta = {}
    if (path / "meta.json").is_file():
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    task_id = meta.get("task_id", path.name)
    style_a = meta.get("style_a", f"{task_id}:a")
    style_b = meta.get("style_b", f"{task_id}:b")
    test_pairs = []
    if (path / "test.tsv").is_file():
        with open(path / "test.tsv", encoding="utf-8") as f:
            test_pairs = parse_test_lines(f, style_a, style_b)
    return make_task(task_id, lines_a, lines_b, vocab, style_a, style_b, test_pairs,
                     support_fraction, seed, max_len)


def load_dataset(root, vocab: Vocabulary, support_fraction: float = DEFAULT_SUPPORT_FRACTION,
                 seed: int = 0, max_len: int = DEFAULT_MAX_LEN) -> list[StyleTask]:
    tasks = [load_task_dir(d, vocab, support_fraction, seed, max_len) for d in task_dirs(root)]
    if not tasks:
        raise EmptyCorpus(f"no task directories under {root}")
    return tasks


def find_task(tasks, task_id) -> StyleTask:
    for t in tasks:
        if t.task_id == task_id:
            return t
    raise UnknownTask(f"unknown task {task_id!r}; have {[t.task_id for t in tasks]}")


@dataclass
class Batch:
    token_ids: torch.Tensor  # [batch, width] int64, EOS-terminated, PAD-filled
    lengths: torch.Tensor  # [batch], counts include EOS
    style_label: torch.Tensor  # [batch] int64 in {0, 1}

    def __len__(self):
        return self.token_ids.shape[0]

    @classmethod
    def from_sequences(cls, seqs, labels):
        if isinstance(labels, int):
            labels = [labels] * len(seqs)
        lengths = [len(s) + 1 for s in seqs]
        ids = torch.full((len(seqs), max(lengths)), PAD, dtype=torch.long)
        for row, s in enumerate(seqs):
            ids[row, :len(s)] = torch.tensor(s, dtype=torch.long)
            ids[row, len(s)] = EOS
        return cls(ids, torch.tensor(lengths, dtype=torch.long),
                   torch.tensor(list(labels), dtype=torch.long))

    @property
    def mask(self) -> torch.Tensor:
        steps = torch.arange(self.token_ids.shape[1])
        return steps[None, :] < self.lengths[:, None]


def _chunks(seqs, order, batch_size, label):
    return [Batch.from_sequences([seqs[i] for i in order[k:k + batch_size]], label)
            for k in range(0, len(order), batch_size)]


def batches(task: StyleTask, split: str, batch_size: int, seed: int) -> Iterator[Batch]:
    """One epoch over a split: single-style batches, alternating a, b, a, b, ..."""
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    per_side = []
    for label in (0, 1):
        seqs = task.split(split, label)
        if not seqs:
            raise EmptySplit(f"task {task.task_id}: {split} split of side {label} is empty")
        per_side.append(_chunks(seqs, rng.permutation(len(seqs)), batch_size, label))
    a, b = per_side
    for k in range(max(len(a), len(b))):
        if k < len(a):
            yield a[k]
        if k < len(b):
            yield b[k]


def pair_stream(task: StyleTask, split: str, batch_size: int, seed: int) -> Iterator[tuple]:
    """Endless stream of (style-a batch, style-b batch) pairs, reshuffled each epoch."""
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    sides = [task.split(split, label) for label in (0, 1)]
    for label, seqs in enumerate(sides):
        if not seqs:
            raise EmptySplit(f"task {task.task_id}: {split} split of side {label} is empty")
    queues = [[], []]
    while True:
        pair = []
        for label, seqs in enumerate(sides):
            if not queues[label]:
                queues[label] = _chunks(seqs, rng.permutation(len(seqs)), batch_size, label)[::-1]
            pair.append(queues[label].pop())
        yield tuple(pair)
