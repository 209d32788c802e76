"""Model checkpoints: named tensors plus everything needed to rebuild the model.

A checkpoint is a ``torch.save`` archive of a plain dict (loadable with
``weights_only=True``) holding the parameter tensors in a fixed order, the
model type and config, the vocabulary, the run config and its hash, and a
kind tag: ``meta``, ``pretrained``, ``finetuned:<task_id>`` or ``init``.
"""
import io
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .corpus import Vocabulary
from .crossalign import CrossAlign, CrossAlignConfig
from .errors import CheckpointMismatch, MissingDependency
from .vae import DisentangledVAE, VaeConfig

FORMAT_VERSION = 1
_KIND = re.compile(r"^(meta|pretrained|init|finetuned:.+)$")


def build_model(model_type: str, config):
    """Instantiate a base model from its type tag and config (dataclass or dict)."""
    if model_type == "vae":
        return DisentangledVAE(config if isinstance(config, VaeConfig) else VaeConfig.from_dict(dict(config)))
    if model_type == "crossalign":
        cfg = config if isinstance(config, CrossAlignConfig) else CrossAlignConfig.from_dict(dict(config))
        return CrossAlign(cfg)
    raise CheckpointMismatch(f"unknown model type {model_type!r}")


@dataclass
class Checkpoint:
    kind: str
    model_type: str
    model_config: dict
    params: OrderedDict
    vocab: Vocabulary
    run_config: dict = field(default_factory=dict)
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not _KIND.match(self.kind):
            raise ValueError(f"bad checkpoint kind {self.kind!r}")

    @property
    def task_id(self):
        return self.kind.split(":", 1)[1] if self.kind.startswith("finetuned:") else None

    def model(self):
        """The model template, after checking every tensor against its shapes."""
        model = build_model(self.model_type, self.model_config)
        expected = OrderedDict((n, tuple(p.shape)) for n, p in model.named_parameters())
        got = OrderedDict((n, tuple(t.shape)) for n, t in self.params.items())
        if list(expected) != list(got):
            missing = sorted(set(expected) - set(got))
            unexpected = sorted(set(got) - set(expected))
            raise CheckpointMismatch(f"parameter names differ (missing {missing}, unexpected {unexpected})")
        for name, shape in expected.items():
            if got[name] != shape:
                raise CheckpointMismatch(f"{name}: checkpoint shape {got[name]} != model shape {shape}")
        if self.model_config.get("vocab_size") != len(self.vocab):
            raise CheckpointMismatch("model vocab_size does not match the stored vocabulary")
        return model

    def to_state(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "model_type": self.model_type,
            "model_config": self.model_config,
            "param_names": list(self.params),
            "tensors": [t.detach().cpu().contiguous() for t in self.params.values()],
            "vocab": list(self.vocab.id_to_token),
            "vocab_min_count": self.vocab.min_count,
            "run_config": self.run_config,
            "config_hash": self.config_hash,
            "extra": self.extra,
        }

    @classmethod
    def from_state(cls, state: dict):
        if state.get("format_version") != FORMAT_VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint format {state.get('format_version')!r}")
        params = OrderedDict(zip(state["param_names"], state["tensors"]))
        vocab = Vocabulary(list(state["vocab"]), min_count=state["vocab_min_count"])
        return cls(state["kind"], state["model_type"], state["model_config"], params, vocab,
                   state["run_config"], state["config_hash"], state["extra"])


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    torch.save(ckpt.to_state(), buf)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingDependency(f"checkpoint {path} not found")
    try:
        state = torch.load(path, weights_only=True)
    except Exception as e:  # torch raises several types for corrupt archives
        raise CheckpointMismatch(f"cannot read checkpoint {path}: {e}") from None
    return Checkpoint.from_state(state)


def make_checkpoint(kind, model, params, vocab, run_config=None, config_hash="", extra=None) -> Checkpoint:
    return Checkpoint(kind, model.kind, model.config_dict(), OrderedDict(params), vocab,
                      dict(run_config or {}), config_hash, dict(extra or {}))
