"""Independent oracles shared by the model tests and the acceptance suite.

Everything here recomputes losses from dumped intermediate quantities with
plain numpy/python loops, so it shares no code path with the package.
"""
import math
from collections import Counter

import numpy as np
import torch


def fd_gradient_check(loss_of, params, names, n_coords, rng, h=1e-6):
    """Compare autograd against central differences on sampled coordinates.

    ``loss_of(params) -> scalar tensor``; ``names`` are the parameters whose
    coordinates are sampled. Returns (analytic, numeric) arrays.
    """
    leaves = {n: p.detach().clone().requires_grad_(True) for n, p in params.items()}
    grads = torch.autograd.grad(loss_of(leaves), [leaves[n] for n in names], allow_unused=True)
    grads = {n: torch.zeros_like(leaves[n]) if g is None else g for n, g in zip(names, grads)}
    sizes = [params[n].numel() for n in names]
    total = sum(sizes)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    analytic, numeric = [], []
    base = {n: p.detach().clone() for n, p in params.items()}
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[k], int(flat - offsets[k])
        values = []
        for sign in (1.0, -1.0):
            shifted = dict(base)
            t = base[name].clone().reshape(-1)
            t[idx] += sign * h
            shifted[name] = t.reshape(base[name].shape)
            with torch.no_grad():
                values.append(float(loss_of(shifted)))
        numeric.append((values[0] - values[1]) / (2 * h))
        analytic.append(float(grads[name].reshape(-1)[idx]))
    return np.array(analytic), np.array(numeric)


def relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def log_softmax_np(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.max(-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(-1, keepdims=True))


def token_nll_oracle(logits, token_ids, lengths, per_sentence=False):
    """Mean NLL per token (or per sentence) from dumped logits, by explicit loops."""
    logp = log_softmax_np(logits)
    total, count = 0.0, 0
    for b in range(logp.shape[0]):
        for t in range(int(lengths[b])):
            total -= logp[b, t, int(token_ids[b, t])]
            count += 1
    return total / (logp.shape[0] if per_sentence else count)


def bce_terms_oracle(p_real, p_fake):
    """E[-log D(real)] + E[-log(1 - D(fake))] from dumped probabilities."""
    real = sum(-math.log(p) for p in p_real) / len(p_real)
    fake = sum(-math.log(1.0 - p) for p in p_fake) / len(p_fake)
    return real + fake


def gaussian_kl_oracle(mu, logvar):
    total = 0.0
    for m, lv in zip(np.ravel(mu), np.ravel(logvar)):
        total += 0.5 * (m * m + math.exp(lv) - 1.0 - lv)
    return total


def cross_entropy_oracle(probs, target):
    """-sum_k target_k log probs_k for one row."""
    return -sum(t * math.log(p) for t, p in zip(target, probs) if t > 0)


def entropy_oracle(probs):
    return -sum(p * math.log(p) for p in probs if p > 0)


def bow_oracle(sequence, vocab_size, n_specials=4, stopwords=()):
    kept = [t for t in sequence if t >= n_specials and t not in stopwords]
    counts = Counter(kept)
    out = np.zeros(vocab_size)
    for t, c in counts.items():
        out[t] = c / len(kept)
    return out
