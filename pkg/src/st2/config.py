"""Run configuration: a flat ``key = value`` file plus command-line overrides.

Keys are dotted paths into sections, for example::

    base_model = vae
    seed = 3
    data = runs/data
    model.hidden_dim = 64
    model.weights.w_kl = 0.1
    meta.inner_steps = 3
    finetune.steps = 100

Values are read as JSON when they parse (numbers, booleans, lists, quoted
strings) and as bare strings otherwise. ``#`` starts a comment.
"""
import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .crossalign import CrossAlignConfig
from .errors import ConfigError
from .meta import MetaConfig
from .vae import LossWeights, VaeConfig

BASE_MODELS = ("crossalign", "vae")

SECTION_DEFAULTS = {
    "corpus": {"min_count": 1, "max_len": 32, "support_fraction": 0.8},
    "finetune": {"steps": 100, "lr": 0.05, "optimizer": "sgd", "batch_size": 32, "kl_warmup": 0.2},
    "pretrain": {"steps": 1000, "lr": 1e-2, "optimizer": "adam", "batch_size": 32, "kl_warmup": 0.2},
    "classifier": {"epochs": 5, "val_fraction": 0.1, "batch_size": 64, "lr": 1e-3},
    "eval": {"max_len": 32, "acc_mode": "threshold", "discount": 0.75},
}
OPTIMIZERS = ("sgd", "adam")


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_assignments(lines, source="<config>") -> dict:
    """``key = value`` lines to a flat ``{dotted_key: value}`` dict."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{n}", "expected 'key = value'")
        out[key] = parse_value(value)
    return out


@dataclass
class RunConfig:
    base_model: str = "vae"
    data: str = ""
    out: str = ""
    seed: int = None
    model: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    classifier: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, overrides=(), **flags):
        """Defaults, then the file at ``path``, then ``overrides`` (``key=value``
        strings), then non-None keyword ``flags``; later sources win."""
        cfg = cls()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("config", f"config file {p} not found")
            cfg.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
        cfg.update(parse_assignments(overrides, "--set"))
        cfg.update({k: v for k, v in flags.items() if v is not None})
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d):
        cfg = cls(**copy.deepcopy(d))
        cfg.validate()
        return cfg

    def update(self, assignments: dict):
        for key, value in assignments.items():
            self.set(key, value)

    def set(self, key: str, value):
        head, _, rest = key.partition(".")
        names = {f.name for f in fields(self)}
        if head not in names:
            raise ConfigError(key, "unknown configuration key")
        if not rest:
            if isinstance(getattr(self, head), dict):
                raise ConfigError(key, "is a section; set one of its keys")
            setattr(self, head, value)
            return
        node = getattr(self, head)
        if not isinstance(node, dict):
            raise ConfigError(key, f"{head} is not a section")
        *parents, leaf = rest.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"{part} is not a section")
        node[leaf] = value

    def section(self, name: str) -> dict:
        merged = dict(SECTION_DEFAULTS[name])
        merged.update(getattr(self, name))
        return merged

    # -- validation --------------------------------------------------------

    def validate(self):
        if self.base_model not in BASE_MODELS:
            raise ConfigError("base_model", f"must be one of {BASE_MODELS}, got {self.base_model!r}")
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0):
            raise ConfigError("seed", "must be a non-negative integer")
        for name in ("data", "out"):
            if not isinstance(getattr(self, name), str):
                raise ConfigError(name, "must be a path string")
        for name, defaults in SECTION_DEFAULTS.items():
            for key, value in getattr(self, name).items():
                if key not in defaults:
                    raise ConfigError(f"{name}.{key}", "unknown configuration key")
                if isinstance(defaults[key], (int, float)) and (
                        not isinstance(value, (int, float)) or isinstance(value, bool)):
                    raise ConfigError(f"{name}.{key}", f"must be a number, got {value!r}")
        for name in ("finetune", "pretrain"):
            s = self.section(name)
            if s["optimizer"] not in OPTIMIZERS:
                raise ConfigError(f"{name}.optimizer", f"must be one of {OPTIMIZERS}")
            if s["steps"] < 0 or s["lr"] < 0 or s["batch_size"] < 1:
                raise ConfigError(name, "steps and lr must be >= 0 and batch_size >= 1")
        c = self.section("corpus")
        if not 0 < c["support_fraction"] < 1:
            raise ConfigError("corpus.support_fraction", "must lie in (0, 1)")
        if c["max_len"] < 1 or c["min_count"] < 1:
            raise ConfigError("corpus", "max_len and min_count must be >= 1")
        if self.section("eval")["acc_mode"] not in ("threshold", "probability"):
            raise ConfigError("eval.acc_mode", "must be 'threshold' or 'probability'")
        self._check_dataclass("meta", MetaConfig, self.meta, exclude=("seed",))
        model_cls = VaeConfig if self.base_model == "vae" else CrossAlignConfig
        self._check_dataclass("model", model_cls, self.model, exclude=("vocab_size",))
        return self

    def _check_dataclass(self, prefix, cls, values, exclude=()):
        names = {f.name for f in fields(cls)} - set(exclude)
        for key in values:
            if key not in names:
                raise ConfigError(f"{prefix}.{key}", "unknown configuration key")
        if cls is VaeConfig and isinstance(values.get("weights"), dict):
            for key in values["weights"]:
                if key not in {f.name for f in fields(LossWeights)}:
                    raise ConfigError(f"model.weights.{key}", "unknown loss weight")
        try:
            self._build(cls, values, vocab_size=16)
        except (ValueError, TypeError) as e:
            raise ConfigError(prefix, str(e)) from None

    @staticmethod
    def _build(cls, values, **extra):
        kwargs = dict(values)
        if "vocab_size" in {f.name for f in fields(cls)}:
            kwargs.update(extra)
        for key in ("disc_kernels", "bow_stopwords"):
            if isinstance(kwargs.get(key), list):
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    # -- derived objects ----------------------------------------------------

    def meta_config(self, seed: int) -> MetaConfig:
        return self._build(MetaConfig, {**self.meta, "seed": seed})

    def model_config(self, vocab_size: int):
        cls = VaeConfig if self.base_model == "vae" else CrossAlignConfig
        return self._build(cls, self.model, vocab_size=vocab_size)

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form (sorted keys, fixed separators)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
