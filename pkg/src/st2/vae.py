"""Disentangled recurrent VAE with style and content latent spaces.

The encoder's final GRU state is projected to Gaussian posteriors over a
style latent (``d_s``) and a content latent (``d_c``). The concatenated
sample conditions the decoder at every input step. Four auxiliary heads
shape the two spaces:

* ``mul_style``    predicts the style label from the style latent,
* ``dis_style``    adversary predicting the style label from the content latent,
* ``mul_content``  predicts the bag-of-words distribution from the content latent,
* ``dis_content``  adversary predicting the bag-of-words from the style latent.

Adversaries are trained on detached latents; the encoder is trained to
maximize their prediction entropy through frozen adversary weights.
"""
from dataclasses import dataclass, field, fields

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .corpus import UNK, Batch
from .errors import DegenerateSentence, InvalidArgument
from .models import BaseModel, concat_batches, greedy_decode, last_state, masked_token_nll, shift_right

N_SPECIALS = UNK + 1


@dataclass
class LossWeights:
    w_rec: float = 1.0
    w_kl: float = 1.0
    w_mul_s: float = 10.0
    w_adv_s: float = 1.0
    w_mul_c: float = 1.0
    w_adv_c: float = 0.03

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not (v >= 0.0 and v != float("inf")):
                raise InvalidArgument(f"loss weight {f.name} must be finite and >= 0, got {v}")
            setattr(self, f.name, v)

    def as_vector(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class VaeConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    style_dim: int = 8
    content_dim: int = 56
    weights: LossWeights = field(default_factory=LossWeights)
    # -1 makes the encoder maximize adversary entropy; +1 minimizes the printed formula.
    adv_sign: float = -1.0
    bow_stopwords: tuple = ()

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.bow_stopwords = tuple(self.bow_stopwords)
        if self.adv_sign not in (-1.0, 1.0):
            raise InvalidArgument("adv_sign must be -1 or +1")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LatentCode:
    style_mu: torch.Tensor
    style_logvar: torch.Tensor
    content_mu: torch.Tensor
    content_logvar: torch.Tensor
    style_eps: torch.Tensor
    content_eps: torch.Tensor

    @property
    def style_sample(self):
        return self.style_mu + torch.exp(0.5 * self.style_logvar) * self.style_eps

    @property
    def content_sample(self):
        return self.content_mu + torch.exp(0.5 * self.content_logvar) * self.content_eps

    def __len__(self):
        return self.style_mu.shape[0]


def gaussian_kl(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last dimension."""
    return 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1)


def kl_loss(code: LatentCode) -> torch.Tensor:
    """Style plus content KL, averaged over the batch."""
    kl = gaussian_kl(code.style_mu, code.style_logvar) + gaussian_kl(code.content_mu, code.content_logvar)
    return kl.mean()


def bow_distribution(sequence, vocab_size: int, stopwords=()) -> torch.Tensor:
    """Within-sentence word distribution over the vocabulary, specials excluded."""
    counts = torch.zeros(vocab_size, dtype=torch.float64)
    kept = [int(t) for t in sequence if int(t) >= N_SPECIALS and int(t) not in stopwords]
    if not kept:
        raise DegenerateSentence("sentence has no countable tokens")
    for t in kept:
        counts[t] += 1
    return counts / len(kept)


def bow_targets(batch: Batch, vocab_size: int, stopwords=(), dtype=torch.float32):
    """Batched BoW targets [B, V] and a mask of rows that have any countable token."""
    ids = batch.token_ids
    keep = (ids >= N_SPECIALS) & batch.mask
    for s in stopwords:
        keep &= ids != s
    counts = torch.zeros(ids.shape[0], vocab_size, dtype=dtype)
    counts.scatter_add_(1, ids, keep.to(dtype))
    n = counts.sum(-1, keepdim=True)
    valid = n.squeeze(-1) > 0
    return counts / n.clamp(min=1), valid


def soft_cross_entropy(logits, target, valid=None):
    """Mean over rows of -sum_w target(w) log softmax(logits)(w)."""
    ce = -(target * torch.log_softmax(logits, dim=-1)).sum(-1)
    if valid is None:
        return ce.mean()
    if not bool(valid.any()):
        return ce.sum() * 0.0
    return ce[valid].mean()


def prediction_entropy(logits, valid=None):
    logp = torch.log_softmax(logits, dim=-1)
    h = -(logp.exp() * logp).sum(-1)
    if valid is None:
        return h.mean()
    if not bool(valid.any()):
        return h.sum() * 0.0
    return h[valid].mean()


class DisentangledVAE(BaseModel):
    kind = "vae"
    adversary_prefixes = ("dis_style.", "dis_content.")

    def __init__(self, config: VaeConfig):
        super().__init__()
        self.config = c = config
        d = c.style_dim + c.content_dim
        self.embed = nn.Embedding(c.vocab_size, c.embed_dim)
        self.enc = nn.GRU(c.embed_dim, c.hidden_dim, batch_first=True)
        self.style_head = nn.Linear(c.hidden_dim, 2 * c.style_dim)
        self.content_head = nn.Linear(c.hidden_dim, 2 * c.content_dim)
        self.dec_init = nn.Linear(d, c.hidden_dim)
        self.dec = nn.GRU(c.embed_dim + d, c.hidden_dim, batch_first=True)
        self.out = nn.Linear(c.hidden_dim, c.vocab_size)
        self.mul_style = nn.Linear(c.style_dim, 2)
        self.dis_style = nn.Linear(c.content_dim, 2)
        self.mul_content = nn.Linear(c.content_dim, c.vocab_size)
        self.dis_content = nn.Linear(c.style_dim, c.vocab_size)

    # -- encoder -----------------------------------------------------------

    def encode(self, batch: Batch, eps=None, seed=None, sample=True) -> LatentCode:
        """Posterior parameters and reparameterized samples.

        ``eps`` may be given as a (style_eps, content_eps) pair to replay a
        forward pass; otherwise it is drawn from ``seed`` (zeros when
        ``sample`` is false).
        """
        self.check_batch(batch)
        states, _ = self.enc(self.embed(batch.token_ids))
        h = last_state(states, batch.lengths)
        s_mu, s_logvar = self.style_head(h).chunk(2, dim=-1)
        c_mu, c_logvar = self.content_head(h).chunk(2, dim=-1)
        if eps is None:
            if sample:
                gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
                eps = (torch.randn(s_mu.shape, generator=gen, dtype=s_mu.dtype),
                       torch.randn(c_mu.shape, generator=gen, dtype=c_mu.dtype))
            else:
                eps = (torch.zeros_like(s_mu), torch.zeros_like(c_mu))
        return LatentCode(s_mu, s_logvar, c_mu, c_logvar, eps[0].detach(), eps[1].detach())

    # -- decoder -----------------------------------------------------------

    def decoder_logits(self, batch: Batch, latent: torch.Tensor):
        """Teacher-forced logits with the latent concatenated to every input step."""
        inputs = self.embed(shift_right(batch.token_ids))
        lat = latent.unsqueeze(1).expand(-1, inputs.shape[1], -1)
        h0 = torch.tanh(self.dec_init(latent)).unsqueeze(0)
        outputs, _ = self.dec(torch.cat([inputs, lat], dim=-1), h0)
        return self.out(outputs)

    def reconstruct_loss(self, batch: Batch, code: LatentCode):
        latent = torch.cat([code.style_sample, code.content_sample], dim=-1)
        # Summed over the sentence so it is on the same scale as the per-sentence KL.
        return masked_token_nll(self.decoder_logits(batch, latent), batch, per_sentence=True)

    # -- auxiliary losses --------------------------------------------------

    def _frozen(self, head, x):
        weights = {n: p.detach() for n, p in head.named_parameters()}
        return functional_call(head, weights, (x,))

    def multitask_style_loss(self, style_sample, gold_label):
        return F.cross_entropy(self.mul_style(style_sample), gold_label)

    def adversarial_style_pair(self, content_sample, gold_label):
        """(J_dis_s, J_adv_s): adversary cross-entropy and its prediction entropy."""
        j_dis = F.cross_entropy(self.dis_style(content_sample.detach()), gold_label)
        j_adv = prediction_entropy(self._frozen(self.dis_style, content_sample))
        return j_dis, j_adv

    def multitask_content_loss(self, content_sample, bow_target, valid=None):
        return soft_cross_entropy(self.mul_content(content_sample), bow_target, valid)

    def adversarial_content_pair(self, style_sample, bow_target, valid=None):
        """(J_dis_c, J_adv_c): mirror of the style pair with a BoW-from-style adversary."""
        j_dis = soft_cross_entropy(self.dis_content(style_sample.detach()), bow_target, valid)
        j_adv = prediction_entropy(self._frozen(self.dis_content, style_sample), valid)
        return j_dis, j_adv

    def head_probs(self, code: LatentCode):
        """Softmax outputs of all four heads (for inspection and tests)."""
        s, c = code.style_sample, code.content_sample
        return {
            "mul_style": torch.softmax(self.mul_style(s), -1),
            "dis_style": torch.softmax(self.dis_style(c), -1),
            "mul_content": torch.softmax(self.mul_content(c), -1),
            "dis_content": torch.softmax(self.dis_content(s), -1),
        }

    def loss_components(self, batch: Batch, code: LatentCode):
        bow, valid = bow_targets(batch, self.config.vocab_size, self.config.bow_stopwords, code.style_mu.dtype)
        s, c = code.style_sample, code.content_sample
        dis_s, adv_s = self.adversarial_style_pair(c, batch.style_label)
        dis_c, adv_c = self.adversarial_content_pair(s, bow, valid)
        return {
            "rec": self.reconstruct_loss(batch, code),
            "kl": kl_loss(code),
            "mul_s": self.multitask_style_loss(s, batch.style_label),
            "adv_s": adv_s,
            "mul_c": self.multitask_content_loss(c, bow, valid),
            "adv_c": adv_c,
            "dis_s": dis_s,
            "dis_c": dis_c,
        }

    def total_loss(self, batch: Batch, weights: LossWeights = None, code: LatentCode = None,
                   seed: int = 0, kl_scale: float = 1.0):
        """Weighted autoencoder loss and the full component breakdown.

        The adversary losses ``dis_s``/``dis_c`` are reported but not included.
        """
        w = weights or self.config.weights
        if code is None:
            code = self.encode(batch, seed=seed)
        parts = self.loss_components(batch, code)
        sign = self.config.adv_sign
        total = (w.w_rec * parts["rec"] + kl_scale * w.w_kl * parts["kl"]
                 + w.w_mul_s * parts["mul_s"] + sign * w.w_adv_s * parts["adv_s"]
                 + w.w_mul_c * parts["mul_c"] + sign * w.w_adv_c * parts["adv_c"])
        return total, parts

    def objective(self, batch_a: Batch, batch_b: Batch, seed: int = 0, kl_scale: float = 1.0):
        both = concat_batches(batch_a, batch_b)
        total, parts = self.total_loss(both, seed=seed, kl_scale=kl_scale)
        loss = total + parts["dis_s"] + parts["dis_c"]
        return loss, {k: v.detach() for k, v in parts.items()}

    def lm_objective(self, batch_a: Batch, batch_b: Batch, seed: int = 0, kl_scale: float = 1.0):
        both = concat_batches(batch_a, batch_b)
        code = self.encode(both, seed=seed)
        w = self.config.weights
        rec, kl = self.reconstruct_loss(both, code), kl_loss(code)
        return w.w_rec * rec + kl_scale * w.w_kl * kl, {"rec": rec.detach(), "kl": kl.detach()}

    # -- inference ---------------------------------------------------------

    def target_style_embedding(self, sequences, batch_size: int = 256):
        """Mean posterior style mean over a corpus of token-id sequences."""
        if not sequences:
            raise InvalidArgument("empty corpus")
        total = None
        with torch.no_grad():
            for k in range(0, len(sequences), batch_size):
                chunk = sequences[k:k + batch_size]
                mu = self.encode(Batch.from_sequences(chunk, 0), sample=False).style_mu
                s = mu.sum(0)
                total = s if total is None else total + s
        return total / len(sequences)

    def transfer(self, batch: Batch, target_style_embedding, max_len: int = 32):
        """Greedy decoding from ``[target style; content mean]``.

        ``target_style_embedding`` is a [d_s] vector shared by all rows, or
        [B, d_s] for per-row targets.
        """
        target = torch.as_tensor(target_style_embedding)
        if target.shape[-1] != self.config.style_dim or target.dim() > 2:
            raise InvalidArgument(
                f"target style embedding must have dimension {self.config.style_dim}, got {tuple(target.shape)}")
        if max_len < 1:
            raise InvalidArgument("max_len must be >= 1")
        with torch.no_grad():
            code = self.encode(batch, sample=False)
            target = target.to(code.style_mu.dtype).expand(len(batch), -1)
            latent = torch.cat([target, code.content_mu], dim=-1)
            h = torch.tanh(self.dec_init(latent)).unsqueeze(0)

            def step(prev, hidden):
                x = torch.cat([self.embed(prev), latent], dim=-1).unsqueeze(1)
                out, hidden = self.dec(x, hidden)
                return self.out(out[:, 0]), hidden

            return greedy_decode(step, h, len(batch), max_len)

    def embeddings(self, batch: Batch):
        with torch.no_grad():
            code = self.encode(batch, sample=False)
        return code.style_mu, code.content_mu

