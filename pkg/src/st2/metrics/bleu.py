"""Corpus-level BLEU-4 with multi-bleu.perl semantics."""
import math
from collections import Counter

from ..errors import InvalidArgument


def _tokens(s):
    return s.split() if isinstance(s, str) else list(s)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_n: int = 4, smooth: bool = False) -> float:
    """Corpus BLEU in [0, 100].

    Hypotheses and references (one per hypothesis) are strings or token
    lists. Clipped n-gram counts and lengths are pooled over the corpus
    before the geometric mean and brevity penalty. Without smoothing, any
    order with zero matches yields 0.
    """
    hypotheses = list(hypotheses)
    references = list(references)
    if len(hypotheses) != len(references):
        raise InvalidArgument(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not references:
        raise InvalidArgument("references must be nonempty")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            ref_counts = _ngrams(r, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in _ngrams(h, n).items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if smooth:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def self_bleu(hypotheses, originals, **kw) -> float:
    """BLEU of system outputs against their own inputs."""
    return bleu(hypotheses, originals, **kw)
