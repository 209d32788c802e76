"""Cross-aligned autoencoder with two adversarial CNN discriminators.

Encoder and decoder are single-layer GRUs conditioned on a learned 2-row
style embedding: it is concatenated to the encoder's first input step and
to the decoder's initial state ``[z; style]``. Discriminator ``D1`` sees
style-a codes as positives and style-b codes as negatives, both paired with
its own embedding of label a; ``D2`` mirrors it for label b.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .corpus import Batch
from .models import (BaseModel, concat_batches, greedy_decode, last_state,
                     masked_token_nll, shift_right)
from .errors import InvalidArgument


@dataclass
class CrossAlignConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    style_dim: int = 16
    disc_filters: int = 64
    disc_kernels: tuple = (3, 4, 5)
    disc_label_dim: int = 8
    disc_input: str = "states"  # "states": per-step encoder states; "final": z only
    adv_weight: float = 1.0

    def __post_init__(self):
        self.disc_kernels = tuple(self.disc_kernels)
        if self.disc_input not in ("states", "final"):
            raise InvalidArgument(f"disc_input must be 'states' or 'final', got {self.disc_input!r}")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Discriminator(nn.Module):
    """Binary classifier over a code sequence concatenated with a label embedding.

    With ``kernels`` it is a TextCNN (conv per width, ReLU, max-over-time);
    with ``kernels=None`` the code is a single vector and a 2-layer perceptron
    is used instead.
    """

    def __init__(self, in_dim, label_dim, filters, kernels):
        super().__init__()
        self.label_embed = nn.Embedding(2, label_dim)
        self.kernels = kernels
        if kernels:
            self.convs = nn.ModuleList(nn.Conv1d(in_dim + label_dim, filters, k) for k in kernels)
            self.head = nn.Linear(filters * len(kernels), 1)
        else:
            self.hidden = nn.Linear(in_dim + label_dim, filters)
            self.head = nn.Linear(filters, 1)

    def forward(self, codes, mask, label):
        """codes: [B, L, D] (or [B, D]); mask: [B, L]; label: int. Returns logits [B]."""
        lab = self.label_embed.weight[label]
        if not self.kernels:
            x = torch.cat([codes, lab.expand(codes.shape[0], -1)], dim=-1)
            return self.head(torch.relu(self.hidden(x))).squeeze(-1)
        b, length, _ = codes.shape
        x = torch.cat([codes, lab.expand(b, length, -1)], dim=-1) * mask.unsqueeze(-1).to(codes.dtype)
        x = x.transpose(1, 2)
        short = max(self.kernels) - length
        if short > 0:
            x = F.pad(x, (0, short))
        pooled = [torch.relu(conv(x)).max(dim=-1).values for conv in self.convs]
        return self.head(torch.cat(pooled, dim=-1)).squeeze(-1)


class CrossAlign(BaseModel):
    kind = "crossalign"
    adversary_prefixes = ("disc1.", "disc2.")

    def __init__(self, config: CrossAlignConfig):
        super().__init__()
        self.config = c = config
        self.embed = nn.Embedding(c.vocab_size, c.embed_dim)
        self.style_embed = nn.Embedding(2, c.style_dim)
        self.enc = nn.GRU(c.embed_dim + c.style_dim, c.hidden_dim, batch_first=True)
        self.dec = nn.GRU(c.embed_dim, c.hidden_dim + c.style_dim, batch_first=True)
        self.out = nn.Linear(c.hidden_dim + c.style_dim, c.vocab_size)
        kernels = c.disc_kernels if c.disc_input == "states" else None
        self.disc1 = Discriminator(c.hidden_dim, c.disc_label_dim, c.disc_filters, kernels)
        self.disc2 = Discriminator(c.hidden_dim, c.disc_label_dim, c.disc_filters, kernels)

    # -- encoder / decoder -------------------------------------------------

    def encode_states(self, batch: Batch):
        """Per-step encoder states [B, L, H] and the content code z [B, H]."""
        self.check_batch(batch)
        emb = self.embed(batch.token_ids)
        style = self.style_embed(batch.style_label)
        first = torch.zeros(emb.shape[0], emb.shape[1], style.shape[-1], dtype=emb.dtype)
        first[:, 0] = 1.0
        states, _ = self.enc(torch.cat([emb, first * style.unsqueeze(1)], dim=-1))
        return states, last_state(states, batch.lengths)

    def encode(self, batch: Batch):
        return self.encode_states(batch)[1]

    def decoder_logits(self, batch: Batch, z=None):
        """Teacher-forced logits [B, L, V] from ``[z; style(label)]``."""
        if z is None:
            z = self.encode(batch)
        h0 = torch.cat([z, self.style_embed(batch.style_label)], dim=-1).unsqueeze(0)
        outputs, _ = self.dec(self.embed(shift_right(batch.token_ids)), h0)
        return self.out(outputs)

    def reconstruct_loss(self, batch: Batch, z=None):
        return masked_token_nll(self.decoder_logits(batch, z), batch)

    # -- adversarial part --------------------------------------------------

    def _disc_inputs(self, states, z, batch):
        if self.config.disc_input == "states":
            return states, batch.mask
        return z, None

    def _disc_logits(self, disc, codes, mask, label, frozen):
        if frozen:
            weights = {n: p.detach() for n, p in disc.named_parameters()}
            return functional_call(disc, weights, (codes, mask, label))
        return disc(codes, mask, label)

    def discriminator_logits(self, enc_x, enc_y, batch_x, batch_y, frozen=False, detach_codes=False):
        """Logits of D1 on (x, y) codes and of D2 on (y, x) codes.

        ``frozen`` blocks gradient into the discriminators, ``detach_codes``
        blocks it into the encoder.
        """
        cx, mx = self._disc_inputs(*enc_x, batch_x)
        cy, my = self._disc_inputs(*enc_y, batch_y)
        if detach_codes:
            cx, cy = cx.detach(), cy.detach()
        return {
            "d1_real": self._disc_logits(self.disc1, cx, mx, 0, frozen),
            "d1_fake": self._disc_logits(self.disc1, cy, my, 0, frozen),
            "d2_real": self._disc_logits(self.disc2, cy, my, 1, frozen),
            "d2_fake": self._disc_logits(self.disc2, cx, mx, 1, frozen),
        }

    def discriminator_probs(self, batch_x: Batch, batch_y: Batch):
        enc_x, enc_y = self.encode_states(batch_x), self.encode_states(batch_y)
        return {k: torch.sigmoid(v) for k, v in
                self.discriminator_logits(enc_x, enc_y, batch_x, batch_y).items()}

    def _adversarial(self, enc_x, enc_y, batch_x, batch_y):
        d = self.discriminator_logits(enc_x, enc_y, batch_x, batch_y, detach_codes=True)
        # -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l)
        loss_disc = (F.softplus(-d["d1_real"]).mean() + F.softplus(d["d1_fake"]).mean()
                     + F.softplus(-d["d2_real"]).mean() + F.softplus(d["d2_fake"]).mean())
        g = self.discriminator_logits(enc_x, enc_y, batch_x, batch_y, frozen=True)
        loss_adv = (F.softplus(g["d1_real"]).mean() + F.softplus(-g["d1_fake"]).mean()
                    + F.softplus(g["d2_real"]).mean() + F.softplus(-g["d2_fake"]).mean())
        return loss_disc, loss_adv

    def adversarial_losses(self, batch_x: Batch, batch_y: Batch):
        """(loss_disc, loss_adv) for a style-a batch and a style-b batch.

        loss_disc only reaches discriminator weights; loss_adv (labels
        flipped) only reaches the encoder side.
        """
        if len(batch_x) == 0 or len(batch_y) == 0:
            raise InvalidArgument("adversarial losses need two nonempty batches")
        return self._adversarial(self.encode_states(batch_x), self.encode_states(batch_y),
                                 batch_x, batch_y)

    # -- training objectives -----------------------------------------------

    def objective(self, batch_a: Batch, batch_b: Batch, seed: int = 0, kl_scale: float = 1.0):
        enc_a, enc_b = self.encode_states(batch_a), self.encode_states(batch_b)
        rec = 0.5 * (self.reconstruct_loss(batch_a, enc_a[1]) + self.reconstruct_loss(batch_b, enc_b[1]))
        loss_disc, loss_adv = self._adversarial(enc_a, enc_b, batch_a, batch_b)
        total = rec + self.config.adv_weight * loss_adv + loss_disc
        return total, {"rec": rec.detach(), "adv": loss_adv.detach(), "disc": loss_disc.detach()}

    def lm_objective(self, batch_a: Batch, batch_b: Batch, seed: int = 0, kl_scale: float = 1.0):
        both = concat_batches(batch_a, batch_b)
        rec = self.reconstruct_loss(both)
        return rec, {"rec": rec.detach()}

    # -- inference ---------------------------------------------------------

    def transfer(self, batch: Batch, target_style, max_len: int = 32):
        """Greedy cross-decoding from ``[z; style(target)]``."""
        if max_len < 1:
            raise InvalidArgument("max_len must be >= 1")
        target = torch.as_tensor(target_style, dtype=torch.long).expand(len(batch))
        if bool(((target < 0) | (target > 1)).any()):
            raise InvalidArgument("target_style must be 0 or 1")
        with torch.no_grad():
            z = self.encode(batch)
            h = torch.cat([z, self.style_embed(target)], dim=-1).unsqueeze(0)

            def step(prev, hidden):
                out, hidden = self.dec(self.embed(prev).unsqueeze(1), hidden)
                return self.out(out[:, 0]), hidden

            return greedy_decode(step, h, len(batch), max_len)

    def embeddings(self, batch: Batch):
        """(style vector, content vector) per sentence for disentanglement analysis.

        The style vector is the discriminator input code: mean-pooled encoder
        states concatenated with the sentence's style embedding.
        """
        with torch.no_grad():
            states, z = self.encode_states(batch)
            m = batch.mask.unsqueeze(-1).to(states.dtype)
            pooled = (states * m).sum(1) / m.sum(1)
            style = torch.cat([pooled, self.style_embed(batch.style_label)], dim=-1)
        return style, z
