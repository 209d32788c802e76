"""Interpolated Kneser-Ney bigram language model and perplexity."""
import math
from collections import Counter

from ..errors import InvalidArgument

BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<s>", "</s>", "<unk>"


def _tokens(s):
    return s.split() if isinstance(s, str) else list(s)


class UniformLM:
    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise InvalidArgument("vocab_size must be >= 1")
        self.vocab_size = vocab_size

    def prob(self, word, history) -> float:
        return 1.0 / self.vocab_size

    def logprob(self, word, history) -> float:
        return -math.log(self.vocab_size)


class KneserNeyBigramLM:
    """Bigram model with absolute discounting interpolated with continuation counts.

    ``P(w|h) = max(c(h,w) - d, 0) / c(h) + d N1+(h.) / c(h) * Pc(w)``, and the
    continuation distribution ``Pc`` is itself discounted and interpolated
    with the uniform distribution over the vocabulary, so every in-vocabulary
    word (including ``<unk>``) has nonzero probability. Unseen histories use
    ``Pc`` directly. The vocabulary is every training token plus ``</s>`` and
    ``<unk>``; ``<s>`` only ever appears as a history.
    """

    def __init__(self, discount: float = 0.75):
        if not 0.0 < discount < 1.0:
            raise InvalidArgument("discount must lie in (0, 1)")
        self.discount = discount
        self.bigrams = Counter()
        self.history_counts = Counter()
        self.history_types = Counter()
        self.continuation = Counter()
        self.vocab = set()

    def fit(self, sentences, extra_vocab=()):
        sentences = [_tokens(s) for s in sentences]
        if not sentences:
            raise InvalidArgument("cannot train a language model on an empty corpus")
        for toks in sentences:
            seq = [BOS_TOKEN] + toks + [EOS_TOKEN]
            for h, w in zip(seq, seq[1:]):
                self.bigrams[h, w] += 1
        for (h, w), c in self.bigrams.items():
            self.history_counts[h] += c
            self.history_types[h] += 1
            self.continuation[w] += 1
        self.vocab = {w for toks in sentences for w in toks} | {EOS_TOKEN, UNK_TOKEN}
        self.vocab |= {w for w in extra_vocab if w != BOS_TOKEN}
        self.n_bigram_types = len(self.bigrams)
        self.n_continued = len(self.continuation)
        return self

    def _norm(self, word):
        return word if word in self.vocab else UNK_TOKEN

    def continuation_prob(self, word) -> float:
        d, n = self.discount, self.n_bigram_types
        word = self._norm(word)
        return (max(self.continuation[word] - d, 0.0) / n
                + d * self.n_continued / n / len(self.vocab))

    def prob(self, word, history) -> float:
        word = self._norm(word)
        if history != BOS_TOKEN:
            history = self._norm(history)
        c_h = self.history_counts[history]
        pc = self.continuation_prob(word)
        if c_h == 0:
            return pc
        d = self.discount
        return (max(self.bigrams[history, word] - d, 0.0) / c_h
                + d * self.history_types[history] / c_h * pc)

    def logprob(self, word, history) -> float:
        return math.log(self.prob(word, history))

    def histories(self):
        return list(self.history_counts)


def train_kn_lm(corpus, discount: float = 0.75, extra_vocab=()) -> KneserNeyBigramLM:
    return KneserNeyBigramLM(discount).fit(corpus, extra_vocab)


def corpus_nll(lm, sentences):
    """(total negative log-probability, number of scored tokens), ``</s>`` included."""
    terms = []
    for s in sentences:
        seq = [BOS_TOKEN] + _tokens(s) + [EOS_TOKEN]
        terms += [-lm.logprob(w, h) for h, w in zip(seq, seq[1:])]
    return math.fsum(terms), len(terms)


def perplexity(lm, sentences) -> float:
    """exp of the mean negative log-probability over every token plus ``</s>``."""
    total, count = corpus_nll(lm, sentences)
    if count == 0:
        raise InvalidArgument("no sentences to score")
    return math.exp(total / count)


def history_mass(lm, history) -> float:
    """Σ_w P(w | history) over the model vocabulary (normalization check)."""
    return math.fsum(lm.prob(w, history) for w in lm.vocab)

