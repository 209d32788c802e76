from collections import Counter

import numpy as np
import pytest
import torch

from st2.corpus import Batch, Vocabulary, make_task
from st2.crossalign import CrossAlign, CrossAlignConfig
from st2.synthetic import SyntheticTaskSpec, generate_task
from st2.vae import DisentangledVAE, VaeConfig

TINY_V = 12


def random_batch(rng, vocab_size=TINY_V, batch=3, max_len=6, label=None):
    """Random EOS-terminated batch with ids drawn from the non-special range."""
    lengths = rng.integers(1, max_len + 1, size=batch)
    seqs = [list(rng.integers(4, vocab_size, size=n)) for n in lengths]
    labels = label if label is not None else list(rng.integers(0, 2, size=batch))
    return Batch.from_sequences(seqs, labels)


def double_params(model, seed):
    return {n: p.double() for n, p in model.init_params(seed).items()}


def make_tiny_crossalign():
    torch.manual_seed(0)
    return CrossAlign(CrossAlignConfig(vocab_size=TINY_V, embed_dim=6, hidden_dim=8, style_dim=3,
                                       disc_filters=4, disc_kernels=(2, 3), disc_label_dim=2)).double()


def make_tiny_vae():
    torch.manual_seed(0)
    return DisentangledVAE(VaeConfig(vocab_size=TINY_V, embed_dim=6, hidden_dim=8, style_dim=3,
                                     content_dim=4)).double()


@pytest.fixture
def tiny_crossalign():
    return make_tiny_crossalign()


@pytest.fixture
def tiny_vae():
    return make_tiny_vae()


@pytest.fixture(scope="session")
def small_synthetic():
    """One small lexicon-swap task with its vocabulary and raw text."""
    spec = SyntheticTaskSpec(sentences_per_side=200, test_pairs=20, seed=0)
    text = generate_task(spec, 0)
    counts = Counter(w for line in text.lines_a + text.lines_b for w in line.split())
    vocab = Vocabulary.from_counts(counts, min_count=1)
    task = make_task(text.task_id, text.lines_a, text.lines_b, vocab, text.style_a, text.style_b, text.test)
    return text, vocab, task


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def synthetic_tasks(n_tasks, vocab_size=60, per_side=100, seed=0, test_pairs=10, marker_pool=20):
    """``n_tasks`` lexicon-swap tasks over one shared vocabulary."""
    spec = SyntheticTaskSpec(vocab_size=vocab_size, sentences_per_side=per_side, test_pairs=test_pairs,
                             seed=seed, marker_pool=marker_pool)
    texts = [generate_task(spec, i) for i in range(n_tasks)]
    counts = Counter(w for t in texts for line in t.lines_a + t.lines_b for w in line.split())
    vocab = Vocabulary.from_counts(counts, min_count=1)
    tasks = [make_task(t.task_id, t.lines_a, t.lines_b, vocab, t.style_a, t.style_b, t.test) for t in texts]
    return tasks, vocab


def small_vae(vocab_size, **kw):
    torch.manual_seed(0)
    cfg = dict(vocab_size=vocab_size, embed_dim=16, hidden_dim=32, style_dim=4, content_dim=12,
               weights=dict(w_kl=0.1))
    cfg.update(kw)
    return DisentangledVAE(VaeConfig(**cfg))
