"""Shared machinery for the two base models.

A base model is an ``nn.Module`` used as a stateless template: every
computation is run against an explicit flat dict of named tensors
(``ModelParams``) through :meth:`BaseModel.call`, which is what lets the
meta-learner copy, perturb and differentiate through parameter sets.
"""
from collections import OrderedDict
from dataclasses import asdict

import torch
from torch import nn
from torch.func import functional_call

from .corpus import BOS, EOS, PAD, Batch
from .errors import DegenerateBatch, InvalidArgument, VocabMismatch

ModelParams = dict  # name -> tensor, in the module's parameter order


class BaseModel(nn.Module):
    """Common surface used by the meta-learner and the evaluation code.

    Subclasses implement ``objective`` (full training loss, discriminator terms
    included with gradients routed to their own parameters only),
    ``lm_objective`` (language-model part only, for pretraining) and
    ``transfer``.
    """

    kind = "base"
    adversary_prefixes: tuple = ()

    def forward(self, method, *args, **kwargs):
        return getattr(self, method)(*args, **kwargs)

    def call(self, params, method, *args, **kwargs):
        """Run ``method`` with ``params`` substituted for the module's own weights."""
        return functional_call(self, params, (method,) + args, kwargs)

    def init_params(self, seed: int) -> ModelParams:
        gen = torch.Generator().manual_seed(seed)
        params = OrderedDict()
        for name, p in self.named_parameters():
            params[name] = self._init_tensor(name, p, gen)
        return params

    def _init_tensor(self, name, p, gen):
        if p.dim() == 1:
            return torch.zeros_like(p)
        bound = 1.0 / max(p.shape[-1], 1) ** 0.5
        if name.endswith("embed.weight") or ".label_embed." in name:
            bound = 0.1
        return (torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * bound

    def is_adversary(self, name: str) -> bool:
        return name.startswith(self.adversary_prefixes)

    def adversary_names(self):
        return [n for n, _ in self.named_parameters() if self.is_adversary(n)]

    def check_batch(self, batch: Batch):
        if batch.token_ids.numel() and (int(batch.token_ids.max()) >= self.config.vocab_size
                                        or int(batch.token_ids.min()) < 0):
            raise VocabMismatch(
                f"token id {int(batch.token_ids.max())} outside vocabulary of size {self.config.vocab_size}")

    def config_dict(self):
        return asdict(self.config)


def shift_right(token_ids: torch.Tensor) -> torch.Tensor:
    """Decoder inputs for teacher forcing: BOS followed by the gold tokens minus the last."""
    bos = torch.full_like(token_ids[:, :1], BOS)
    return torch.cat([bos, token_ids[:, :-1]], dim=1)


def masked_token_nll(logits: torch.Tensor, batch: Batch, per_sentence: bool = False) -> torch.Tensor:
    """Token NLL over non-PAD positions: mean per token, or summed per sentence
    and averaged over the batch when ``per_sentence``."""
    mask = batch.mask
    n = mask.sum()
    if int(n) == 0:
        raise DegenerateBatch("batch has no non-PAD positions")
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, batch.token_ids.unsqueeze(-1)).squeeze(-1)
    total = (nll * mask).sum()
    return total / mask.shape[0] if per_sentence else total / n


def last_state(outputs: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    idx = (lengths - 1).clamp(min=0)
    return outputs[torch.arange(outputs.shape[0]), idx]


def concat_batches(a: Batch, b: Batch) -> Batch:
    width = max(a.token_ids.shape[1], b.token_ids.shape[1])

    def pad(ids):
        extra = width - ids.shape[1]
        if extra == 0:
            return ids
        return torch.cat([ids, torch.full((ids.shape[0], extra), PAD, dtype=ids.dtype)], dim=1)

    return Batch(torch.cat([pad(a.token_ids), pad(b.token_ids)]),
                 torch.cat([a.lengths, b.lengths]),
                 torch.cat([a.style_label, b.style_label]))


def greedy_decode(step, hidden, batch_size: int, max_len: int) -> list[list[int]]:
    """Greedy decoding loop.

    ``step(prev_tokens, hidden) -> (logits, hidden)``. Each output stops after
    its first EOS or at ``max_len`` tokens; EOS is kept when emitted.
    """
    if max_len < 1:
        raise InvalidArgument("max_len must be >= 1")
    prev = torch.full((batch_size,), BOS, dtype=torch.long)
    done = torch.zeros(batch_size, dtype=torch.bool)
    outputs = [[] for _ in range(batch_size)]
    with torch.no_grad():
        for _ in range(max_len):
            logits, hidden = step(prev, hidden)
            prev = logits.argmax(-1)
            for i in range(batch_size):
                if not done[i]:
                    outputs[i].append(int(prev[i]))
            done |= prev == EOS
            if bool(done.all()):
                break
    return outputs


def strip_eos(seq):
    return list(seq[:seq.index(EOS)]) if EOS in seq else list(seq)

