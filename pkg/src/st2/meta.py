"""Multi-task meta-learning over style-transfer tasks, fine-tuning and pretraining.

The core (:func:`adapt`, :func:`task_gradient`, :func:`meta_step`) is generic
over any ``loss_fn(params, data) -> scalar`` on a flat dict of tensors, so the
same code drives the base models and small analytic test problems. The
task-level wrappers draw support/query batches from :class:`StyleTask`
objects and call a base model's full objective, discriminator terms
included, so adversary weights are adapted and meta-updated as well.
"""
import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .corpus import StyleTask, pair_stream
from .errors import DivergedAdaptation, EmptyCorpus, InvalidArgument
from .seeding import substream

log = logging.getLogger(__name__)


@dataclass
class MetaConfig:
    inner_lr: float = 1e-2
    outer_lr: float = 1e-3
    inner_steps: int = 5
    meta_batch: int = 0  # tasks per outer step; 0 means all tasks
    order: str = "first"
    max_outer_steps: int = 1000
    seed: int = 0
    batch_size: int = 32
    outer_optimizer: str = "sgd"  # "sgd" is the plain update; "adam" is optional
    kl_warmup: float = 0.2  # fraction of outer steps over which the KL weight ramps up
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.inner_lr > 0 or not self.outer_lr > 0:
            raise InvalidArgument("inner_lr and outer_lr must be positive")
        if self.inner_steps < 1:
            raise InvalidArgument("inner_steps must be >= 1")
        if self.order not in ("first", "second"):
            raise InvalidArgument(f"order must be 'first' or 'second', got {self.order!r}")
        if self.outer_optimizer not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown outer optimizer {self.outer_optimizer!r}")
        if self.max_outer_steps < 0 or self.meta_batch < 0 or self.batch_size < 1:
            raise InvalidArgument("max_outer_steps, meta_batch must be >= 0 and batch_size >= 1")


@dataclass
class TaskGrad:
    task_id: str
    query_loss: float
    grad: dict


@dataclass
class Episode:
    """Data for one task in one outer step: K support items and one query item."""
    task_id: str
    support: list
    query: object


@dataclass
class StepData:
    batch_a: object
    batch_b: object
    seed: int = 0
    kl_scale: float = 1.0


def clone_params(params) -> OrderedDict:
    return OrderedDict((n, p.detach().clone()) for n, p in params.items())


def params_digest(params) -> str:
    h = hashlib.sha256()
    for n, p in params.items():
        h.update(n.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _leaves(params):
    return OrderedDict((n, p.detach().clone().requires_grad_(True)) for n, p in params.items())


def _grad(loss, params, create_graph=False):
    grads = torch.autograd.grad(loss, list(params.values()), create_graph=create_graph,
                                allow_unused=True)
    return OrderedDict((n, torch.zeros_like(p) if g is None else g)
                       for (n, p), g in zip(params.items(), grads))


def adapt(loss_fn: Callable, params, support, alpha: float, create_graph: bool = False,
          task_id=None) -> OrderedDict:
    """Run one gradient step per support item: θ ← θ − α ∇L(θ).

    With ``create_graph`` the result stays differentiable w.r.t. ``params``;
    otherwise each step starts from detached leaves.
    """
    fast = OrderedDict(params) if create_graph else _leaves(params)
    for step, data in enumerate(support, 1):
        loss = loss_fn(fast, data)
        if not torch.isfinite(loss):
            raise DivergedAdaptation(step, task_id)
        grads = _grad(loss, fast, create_graph=create_graph)
        fast = OrderedDict((n, p - alpha * grads[n]) for n, p in fast.items())
        if not create_graph:
            fast = _leaves(fast)
    return fast


def task_gradient(loss_fn: Callable, meta_params, episode: Episode, cfg: MetaConfig) -> TaskGrad:
    """Query-loss gradient for one task after adapting on its support items.

    ``order="second"`` differentiates through the inner updates; ``"first"``
    returns the query gradient evaluated at the adapted parameters.
    """
    if cfg.order == "second":
        theta = _leaves(meta_params)
        fast = adapt(loss_fn, theta, episode.support, cfg.inner_lr, create_graph=True,
                     task_id=episode.task_id)
        q = loss_fn(fast, episode.query)
        wrt = theta
    else:
        fast = adapt(loss_fn, meta_params, episode.support, cfg.inner_lr, task_id=episode.task_id)
        q = loss_fn(fast, episode.query)
        wrt = fast
    if not torch.isfinite(q):
        raise DivergedAdaptation(len(episode.support) + 1, episode.task_id)
    grads = _grad(q, wrt)
    return TaskGrad(episode.task_id, float(q.detach()),
                    OrderedDict((n, g.detach()) for n, g in grads.items()))


class OuterOptimizer:
    """Applies the meta update θ ← θ − β Σ_t g_t (or an Adam step on the same sum)."""

    def __init__(self, params, lr: float, kind: str = "sgd"):
        self.kind = kind
        self.lr = lr
        self.leaves = OrderedDict((n, p.detach().clone()) for n, p in params.items())
        self._adam = torch.optim.Adam(list(self.leaves.values()), lr=lr) if kind == "adam" else None

    def step(self, grads) -> OrderedDict:
        if self._adam is None:
            for n, p in self.leaves.items():
                p.sub_(self.lr * grads[n])
        else:
            for n, p in self.leaves.items():
                p.grad = grads[n].clone()
            self._adam.step()
            self._adam.zero_grad(set_to_none=True)
        return clone_params(self.leaves)


def sum_grads(task_grads) -> OrderedDict:
    total = OrderedDict()
    for tg in task_grads:
        for n, g in tg.grad.items():
            total[n] = g.clone() if n not in total else total[n] + g
    return total


def meta_step(loss_fn: Callable, meta_params, episodes, cfg: MetaConfig, optimizer: OuterOptimizer = None):
    """One outer update on the summed query losses of ``episodes``.

    Returns the new parameters and a {task_id: query loss} dict. The caller's
    ``meta_params`` are never modified.
    """
    if not episodes:
        raise InvalidArgument("meta_step needs at least one task")
    task_grads = [task_gradient(loss_fn, meta_params, ep, cfg) for ep in episodes]
    total = sum_grads(task_grads)
    if optimizer is None:
        new = OrderedDict((n, p.detach() - cfg.outer_lr * total[n]) for n, p in meta_params.items())
    else:
        new = optimizer.step(total)
    return new, OrderedDict((tg.task_id, tg.query_loss) for tg in task_grads)


# -- base-model wrappers ------------------------------------------------------

def objective_fn(model, method: str = "objective") -> Callable:
    def loss_fn(params, data: StepData):
        loss, _ = model.call(params, method, data.batch_a, data.batch_b,
                             seed=data.seed, kl_scale=data.kl_scale)
        return loss
    return loss_fn


def kl_schedule(step: int, total_steps: int, warmup: float) -> float:
    if warmup <= 0 or total_steps <= 0:
        return 1.0
    return min(1.0, step / (warmup * total_steps))


class EpisodeSampler:
    """Per-task support/query batch streams with seed-derived ε seeds."""

    def __init__(self, tasks, cfg: MetaConfig):
        self.cfg = cfg
        self.support = {t.task_id: pair_stream(t, "support", cfg.batch_size,
                                               substream(cfg.seed, "data", t.task_id, "support"))
                        for t in tasks}
        self.query = {t.task_id: pair_stream(t, "query", cfg.batch_size,
                                             substream(cfg.seed, "data", t.task_id, "query"))
                      for t in tasks}

    def episode(self, task: StyleTask, outer_step: int, kl_scale: float = 1.0) -> Episode:
        tid = task.task_id
        support = [StepData(*next(self.support[tid]), substream(self.cfg.seed, "eps", tid, outer_step, k),
                            kl_scale)
                   for k in range(self.cfg.inner_steps)]
        query = StepData(*next(self.query[tid]), substream(self.cfg.seed, "eps", tid, outer_step, "q"),
                         kl_scale)
        return Episode(tid, support, query)


def inner_adapt(model, meta_params, task: StyleTask, cfg: MetaConfig) -> OrderedDict:
    """K steps of the task's full objective on support batches from ``meta_params``."""
    episode = EpisodeSampler([task], cfg).episode(task, 0)
    fast = adapt(objective_fn(model), meta_params, episode.support, cfg.inner_lr, task_id=task.task_id)
    return clone_params(fast)


@dataclass
class MetaResult:
    params: OrderedDict
    trace: list = field(default_factory=list)  # (step, task_id, query loss)
    steps: int = 0


def train_meta(model, meta_params, tasks, cfg: MetaConfig, hooks=(), checkpoint_fn=None) -> MetaResult:
    """Outer loop: meta_step until ``max_outer_steps`` or a hook returns True.

    ``hooks`` are called as ``hook(step, params, task_losses)``;
    ``checkpoint_fn(step, params)`` every ``cfg.checkpoint_every`` steps.
    """
    if not tasks:
        raise EmptyCorpus("no tasks to meta-train on")
    params = clone_params(meta_params)
    sampler = EpisodeSampler(tasks, cfg)
    optimizer = OuterOptimizer(params, cfg.outer_lr, cfg.outer_optimizer)
    loss_fn = objective_fn(model)
    rng = np.random.default_rng(substream(cfg.seed, "tasks"))
    result = MetaResult(params)
    for step in range(1, cfg.max_outer_steps + 1):
        chosen = tasks
        if 0 < cfg.meta_batch < len(tasks):
            chosen = [tasks[i] for i in sorted(rng.choice(len(tasks), cfg.meta_batch, replace=False))]
        kl = kl_schedule(step - 1, cfg.max_outer_steps, cfg.kl_warmup)
        episodes = [sampler.episode(t, step, kl) for t in chosen]
        params, losses = meta_step(loss_fn, params, episodes, cfg, optimizer)
        result.trace += [(step, tid, loss) for tid, loss in losses.items()]
        result.params, result.steps = params, step
        if step % 50 == 0:
            log.info("outer step %d: summed query loss %.4f", step, sum(losses.values()))
        if cfg.checkpoint_every and checkpoint_fn is not None and step % cfg.checkpoint_every == 0:
            checkpoint_fn(step, params)
        if any(hook(step, params, losses) for hook in hooks):
            break
    return result


def _descend(model, params, stream, steps, lr, seed, optimizer, method, kl_warmup, trainable, trace):
    leaves = _leaves(params)
    names = [n for n in leaves if trainable(n)]
    opt_cls = torch.optim.Adam if optimizer == "adam" else torch.optim.SGD
    opt = opt_cls([leaves[n] for n in names], lr=lr) if names and steps > 0 and lr > 0 else None
    for step in range(steps):
        if opt is None:
            break
        batch_a, batch_b = next(stream)
        loss, _ = model.call(leaves, method, batch_a, batch_b, seed=substream(seed, "eps", step),
                             kl_scale=kl_schedule(step, steps, kl_warmup))
        if not torch.isfinite(loss):
            raise DivergedAdaptation(step + 1)
        grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
        for n, g in zip(names, grads):
            leaves[n].grad = torch.zeros_like(leaves[n]) if g is None else g
        opt.step()
        opt.zero_grad(set_to_none=True)
        if trace is not None:
            trace.append(float(loss.detach()))
    return clone_params(leaves)


def finetune(model, meta_params, task: StyleTask, steps: int, lr: float, seed: int = 0,
             batch_size: int = 32, optimizer: str = "sgd", kl_warmup: float = 0.2,
             trace: list = None) -> OrderedDict:
    """Gradient descent of the full objective on the task's whole training split."""
    if steps < 0 or lr < 0:
        raise InvalidArgument("steps and lr must be >= 0")
    stream = pair_stream(task, "train", batch_size, substream(seed, "data", task.task_id, "finetune"))
    return _descend(model, meta_params, stream, steps, lr, seed, optimizer, "objective", kl_warmup,
                    lambda n: True, trace)


def pooled_task(tasks) -> StyleTask:
    tasks = list(tasks)
    if not tasks or not any(t.train_a or t.train_b for t in tasks):
        raise EmptyCorpus("no data to pool")
    train_a = tuple(s for t in tasks for s in t.train_a)
    train_b = tuple(s for t in tasks for s in t.train_b)
    return StyleTask("pooled", "pooled:a", "pooled:b", train_a, train_b, tasks[0].support_fraction,
                     (tuple(range(len(train_a))), tuple(range(len(train_b)))), ((), ()))


def pretrain_base(model, params, all_tasks, steps: int, lr: float, seed: int = 0,
                  batch_size: int = 32, optimizer: str = "adam", kl_warmup: float = 0.2,
                  trace: list = None) -> OrderedDict:
    """Train only the language-model part (reconstruction, plus KL for the VAE)
    on the union of every task's training data. Adversary weights are untouched.
    """
    if steps < 0 or lr < 0:
        raise InvalidArgument("steps and lr must be >= 0")
    pooled = pooled_task(all_tasks)
    stream = pair_stream(pooled, "train", batch_size, substream(seed, "data", "pretrain"))
    return _descend(model, params, stream, steps, lr, seed, optimizer, "lm_objective", kl_warmup,
                    lambda n: not model.is_adversary(n), trace)
