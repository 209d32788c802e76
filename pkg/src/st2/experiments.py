"""Few-shot comparison protocol on synthetic style-pair suites.

A suite has ``n_meta_tasks`` training tasks and one held-out task whose
model-visible training data is cut down to ``fewshot_per_side`` sentences
per style. The held-out task's full corpus only trains the evaluators (the
style classifier and the per-style LMs), as with reduced standard datasets.

Arms, all ending in the same fine-tuning run on the held-out task:

``st2``         meta-train on the training tasks, then fine-tune
``scratch``     fine-tune from the random initialization
``pretrained``  pretrain the language-model part on the pooled training tasks, then fine-tune
``st2_pre``     pretrain, meta-train, then fine-tune
"""
import logging
import time
from collections import Counter
from dataclasses import dataclass, field, fields

from .checkpoint import build_model
from .corpus import Vocabulary, make_task, tokenize
from .evaluation import TaskEvaluators, evaluate_task
from .metrics.report import average_reports
from .meta import MetaConfig, finetune, pretrain_base, train_meta
from .seeding import substream
from .synthetic import SyntheticTaskSpec, generate_task

log = logging.getLogger(__name__)

ARMS = ("st2", "scratch", "pretrained", "st2_pre")


def suite_model(kind: str, vocab_size: int, overrides: dict = None):
    return build_model(kind, {"vocab_size": vocab_size, **(overrides or {})})


def _small_model():
    return {"embed_dim": 32, "hidden_dim": 64, "style_dim": 8, "content_dim": 24, "weights": {"w_kl": 0.1}}


def _meta_defaults():
    return {"inner_lr": 0.05, "outer_lr": 1e-2, "inner_steps": 3, "max_outer_steps": 300,
            "batch_size": 32, "outer_optimizer": "adam", "order": "first"}


@dataclass
class SuiteConfig:
    seed: int = 0
    base_model: str = "vae"
    kind: str = "lexicon-swap"
    n_meta_tasks: int = 4
    vocab_size: int = 200
    sentences_per_side: int = 2000
    fewshot_per_side: int = 100
    test_pairs: int = 200
    model: dict = field(default_factory=_small_model)
    meta: dict = field(default_factory=_meta_defaults)
    # Plain gradient descent at the inner-loop rate: the update the meta-learned
    # initialization was trained to respond to.
    finetune_steps: int = 100
    finetune_lr: float = 0.05
    finetune_optimizer: str = "sgd"
    finetune_batch: int = 32
    pretrain_steps: int = 1500
    pretrain_lr: float = 1e-2
    classifier_epochs: int = 3
    decode_len: int = 16

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Suite:
    vocab: Vocabulary
    tasks: list
    heldout: object
    evaluators: TaskEvaluators


def build_suite(cfg: SuiteConfig) -> Suite:
    spec = SyntheticTaskSpec(kind=cfg.kind, vocab_size=cfg.vocab_size,
                             sentences_per_side=cfg.sentences_per_side, test_pairs=cfg.test_pairs,
                             seed=cfg.seed)
    texts = [generate_task(spec, i) for i in range(cfg.n_meta_tasks + 1)]
    held = texts.pop()
    few_a, few_b = held.lines_a[:cfg.fewshot_per_side], held.lines_b[:cfg.fewshot_per_side]
    counts = Counter()
    for t in texts:
        for line in t.lines_a + t.lines_b:
            counts.update(tokenize(line))
    for line in few_a + few_b:
        counts.update(tokenize(line))
    vocab = Vocabulary.from_counts(counts, min_count=1)
    split_seed = substream(cfg.seed, "split")
    tasks = [make_task(t.task_id, t.lines_a, t.lines_b, vocab, t.style_a, t.style_b, t.test, seed=split_seed)
             for t in texts]
    heldout = make_task(held.task_id, few_a, few_b, vocab, held.style_a, held.style_b, held.test,
                        seed=split_seed)
    evaluators = TaskEvaluators.fit(held.lines_a, held.lines_b, seed=substream(cfg.seed, "classifier"),
                                    classifier_epochs=cfg.classifier_epochs)
    return Suite(vocab, tasks, heldout, evaluators)


@dataclass
class SuiteResult:
    reports: dict  # arm -> MetricReport
    outputs: dict  # arm -> transferred test sentences
    seconds: dict = field(default_factory=dict)
    classifier_accuracy: float = None


def run_suite(cfg: SuiteConfig, arms=("st2", "scratch", "pretrained"), suite: Suite = None) -> SuiteResult:
    suite = suite or build_suite(cfg)
    model = suite_model(cfg.base_model, len(suite.vocab), cfg.model)
    init = model.init_params(substream(cfg.seed, "init"))
    meta_cfg = MetaConfig(seed=substream(cfg.seed, "meta"), **cfg.meta)
    ft_kw = dict(steps=cfg.finetune_steps, lr=cfg.finetune_lr, seed=substream(cfg.seed, "finetune"),
                 batch_size=cfg.finetune_batch, optimizer=cfg.finetune_optimizer)
    result = SuiteResult({}, {}, classifier_accuracy=suite.evaluators.classifier.val_accuracy)
    pretrained = None
    for arm in arms:
        t0 = time.time()
        if arm in ("pretrained", "st2_pre") and pretrained is None:
            pretrained = pretrain_base(model, init, suite.tasks, cfg.pretrain_steps, cfg.pretrain_lr,
                                       seed=substream(cfg.seed, "pretrain"), batch_size=cfg.finetune_batch)
        if arm == "st2":
            start = train_meta(model, init, suite.tasks, meta_cfg).params
        elif arm == "st2_pre":
            start = train_meta(model, pretrained, suite.tasks, meta_cfg).params
        elif arm == "scratch":
            start = init
        elif arm == "pretrained":
            start = pretrained
        else:
            raise ValueError(f"unknown arm {arm!r}")
        params = finetune(model, start, suite.heldout, **ft_kw)
        report, outputs = evaluate_task(model, params, suite.heldout, suite.vocab, suite.evaluators,
                                        max_len=cfg.decode_len)
        report.task_id = f"{suite.heldout.task_id}:{arm}"
        result.reports[arm], result.outputs[arm] = report, outputs
        result.seconds[arm] = time.time() - t0
        log.info("%s seed %d: %s (%.0fs)", arm, cfg.seed, report.to_dict(), result.seconds[arm])
    return result


def run_trend_study(seeds=(0, 1, 2, 3, 4), arms=("st2", "scratch", "pretrained"), base: SuiteConfig = None,
                    progress=None):
    """Run the suite once per seed. Returns ({arm: seed-averaged MetricReport}, [SuiteResult])."""
    base = base or SuiteConfig()
    results = []
    for seed in seeds:
        cfg = SuiteConfig.from_dict({**base.__dict__, "seed": seed})
        results.append(run_suite(cfg, arms))
        if progress is not None:
            progress(seed, results[-1])
    means = {arm: average_reports([r.reports[arm] for r in results], task_id=f"mean:{arm}") for arm in arms}
    return means, results
