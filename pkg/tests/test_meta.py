from collections import OrderedDict

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import small_vae, synthetic_tasks
from st2.corpus import Batch, pair_stream
from st2.crossalign import CrossAlign, CrossAlignConfig
from st2.errors import DivergedAdaptation, EmptyCorpus, InvalidArgument
from st2.meta import (Episode, MetaConfig, StepData, adapt, finetune, inner_adapt, meta_step, objective_fn,
                      params_digest, pooled_task, pretrain_base, sum_grads, task_gradient, train_meta)


def quadratic(params, a):
    return ((params["theta"] - a) ** 2).sum()


def theta(x):
    return OrderedDict(theta=torch.tensor([float(x)], dtype=torch.float64))


def cfg(**kw):
    base = dict(inner_lr=0.25, outer_lr=1.0, inner_steps=1, order="second")
    base.update(kw)
    return MetaConfig(**base)


def test_quadratic_second_order_step():
    ep = Episode("t", [1.0], 1.0)
    tg = task_gradient(quadratic, theta(0), ep, cfg())
    assert tg.query_loss == pytest.approx(0.25, abs=1e-15)
    assert float(tg.grad["theta"]) == pytest.approx(-0.5, abs=1e-15)
    new, losses = meta_step(quadratic, theta(0), [ep], cfg())
    assert float(new["theta"]) == pytest.approx(0.5, abs=1e-15)
    assert losses == {"t": 0.25}


def test_quadratic_first_order_step():
    new, _ = meta_step(quadratic, theta(0), [Episode("t", [1.0], 1.0)], cfg(order="first"))
    assert float(new["theta"]) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(1e-4, 0.45))
def test_second_order_matches_chain_rule(t0, a, alpha):
    adapted = t0 - alpha * 2 * (t0 - a)
    expected = 2 * (adapted - a) * (1 - 2 * alpha)
    tg = task_gradient(quadratic, theta(t0), Episode("t", [a], a), cfg(inner_lr=alpha))
    assert float(tg.grad["theta"]) == pytest.approx(expected, abs=1e-8)


def test_first_order_converges_to_second_order_for_small_alpha():
    rng = np.random.default_rng(0)
    for _ in range(10):
        t0, a = rng.normal(size=2)
        ep = Episode("t", [a, a], a)
        g2 = task_gradient(quadratic, theta(t0), ep, cfg(inner_lr=1e-5, inner_steps=2)).grad["theta"]
        g1 = task_gradient(quadratic, theta(t0), ep, cfg(inner_lr=1e-5, inner_steps=2, order="first")).grad["theta"]
        assert float((g2 - g1).norm() / g1.norm()) < 1e-3


def linreg(params, data):
    x, y = data
    return ((x @ params["w"] - y) ** 2).mean()


def test_second_order_matches_finite_differences_on_linear_regression():
    rng = np.random.default_rng(1)
    alpha, k = 0.1, 3
    tasks = []
    for _ in range(3):
        w_true = rng.normal(size=2)
        xs = [rng.normal(size=(5, 2)) for _ in range(k + 1)]
        tasks.append([(x, x @ w_true + 0.1 * rng.normal(size=5)) for x in xs])

    def query_total(w):
        # numpy oracle: K explicit gradient steps, then the query loss
        total = 0.0
        for data in tasks:
            v = w.copy()
            for x, y in data[:k]:
                v = v - alpha * 2.0 / len(y) * x.T @ (x @ v - y)
            x, y = data[k]
            total += np.mean((x @ v - y) ** 2)
        return total

    w0 = rng.normal(size=2)
    eps = [Episode(str(i), [tuple(map(torch.from_numpy, d)) for d in data[:k]],
                   tuple(map(torch.from_numpy, data[k]))) for i, data in enumerate(tasks)]
    c = cfg(inner_lr=alpha, inner_steps=k)
    params = OrderedDict(w=torch.from_numpy(w0.copy()))
    g = sum_grads(task_gradient(linreg, params, e, c) for e in eps)["w"].numpy()
    h = 1e-6
    fd = np.array([(query_total(w0 + h * e) - query_total(w0 - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_two_identical_tasks_double_the_gradient():
    ep = Episode("t", [1.0, 0.5], 2.0)
    one = task_gradient(quadratic, theta(0.3), ep, cfg(inner_steps=2))
    both = sum_grads([task_gradient(quadratic, theta(0.3), ep, cfg(inner_steps=2))] * 2)
    assert torch.equal(both["theta"], 2 * one.grad["theta"])


def test_meta_step_is_task_order_invariant():
    rng = np.random.default_rng(2)
    eps = [Episode(str(i), list(rng.normal(size=2)), float(rng.normal())) for i in range(4)]
    a, _ = meta_step(quadratic, theta(0.1), eps, cfg(inner_steps=2, outer_lr=0.1))
    b, _ = meta_step(quadratic, theta(0.1), eps[::-1], cfg(inner_steps=2, outer_lr=0.1))
    assert float(a["theta"]) == pytest.approx(float(b["theta"]), abs=1e-14)


def test_meta_step_requires_a_task_and_leaves_input_alone():
    p = theta(0.0)
    with pytest.raises(InvalidArgument):
        meta_step(quadratic, p, [], cfg())
    before = params_digest(p)
    meta_step(quadratic, p, [Episode("t", [1.0], 1.0)], cfg())
    assert params_digest(p) == before


def test_config_validation():
    with pytest.raises(InvalidArgument):
        MetaConfig(inner_steps=0)
    with pytest.raises(InvalidArgument):
        MetaConfig(inner_lr=0)
    with pytest.raises(InvalidArgument):
        MetaConfig(order="third")


def test_zero_step_size_adaptation_is_identity():
    p = OrderedDict(w=torch.randn(3, dtype=torch.float64))
    out = adapt(linreg, p, [(torch.randn(4, 3, dtype=torch.float64), torch.randn(4, dtype=torch.float64))], 0.0)
    assert torch.equal(out["w"], p["w"])


def test_divergence_is_reported_with_step_and_task():
    with pytest.raises(DivergedAdaptation) as err:
        task_gradient(quadratic, theta(1.0), Episode("far", [0.0] * 6, 0.0), cfg(inner_lr=1e200, inner_steps=6,
                                                                                     order="first"))
    assert err.value.task_id == "far" and 1 < err.value.step <= 6
    assert err.value.exit_code == 4


@pytest.fixture(scope="module")
def four_tasks():
    return synthetic_tasks(4, per_side=60)


def _model_cfg(**kw):
    base = dict(inner_lr=0.05, outer_lr=1e-2, inner_steps=2, max_outer_steps=3, batch_size=8,
                outer_optimizer="adam")
    base.update(kw)
    return MetaConfig(**base)


@pytest.mark.parametrize("kind", ["vae", "crossalign"])
def test_inner_adapt_is_pure_and_deterministic(four_tasks, kind):
    tasks, vocab = four_tasks
    if kind == "vae":
        model = small_vae(len(vocab))
    else:
        torch.manual_seed(0)
        model = CrossAlign(CrossAlignConfig(vocab_size=len(vocab), embed_dim=8, hidden_dim=16, style_dim=4,
                                            disc_filters=4))
    params = model.init_params(0)
    before = params_digest(params)
    a = inner_adapt(model, params, tasks[0], _model_cfg())
    assert params_digest(params) == before
    b = inner_adapt(model, params, tasks[0], _model_cfg())
    assert params_digest(a) == params_digest(b) != before
    # Adversary weights move inside the inner loop as well.
    adv = [n for n in params if model.is_adversary(n)]
    assert any(not torch.equal(a[n], params[n]) for n in adv)


def test_train_meta_zero_steps_and_trace(four_tasks):
    tasks, vocab = four_tasks
    model = small_vae(len(vocab))
    params = model.init_params(0)
    res = train_meta(model, params, tasks, _model_cfg(max_outer_steps=0))
    assert params_digest(res.params) == params_digest(params) and res.trace == []
    res = train_meta(model, params, tasks, _model_cfg(max_outer_steps=3))
    assert res.steps == 3 and len(res.trace) == 3 * len(tasks)
    assert [s for s, _, _ in res.trace] == [1] * 4 + [2] * 4 + [3] * 4
    again = train_meta(model, params, tasks, _model_cfg(max_outer_steps=3))
    assert params_digest(again.params) == params_digest(res.params)
    with pytest.raises(EmptyCorpus):
        train_meta(model, params, [], _model_cfg())


def test_train_meta_hooks_and_checkpoints(four_tasks):
    tasks, vocab = four_tasks
    model = small_vae(len(vocab))
    saved = []
    res = train_meta(model, model.init_params(0), tasks, _model_cfg(max_outer_steps=10, checkpoint_every=2),
                     hooks=[lambda step, p, losses: step == 5], checkpoint_fn=lambda s, p: saved.append(s))
    assert res.steps == 5 and saved == [2, 4]


def test_train_meta_meta_batch_subsamples(four_tasks):
    tasks, vocab = four_tasks
    model = small_vae(len(vocab))
    res = train_meta(model, model.init_params(0), tasks, _model_cfg(max_outer_steps=2, meta_batch=2))
    assert len(res.trace) == 4


@pytest.mark.slow
def test_meta_training_reduces_query_loss_across_seeds():
    tasks, vocab = synthetic_tasks(4, per_side=100, seed=5)
    wins = 0
    for seed in range(10):
        model = small_vae(len(vocab))
        c = _model_cfg(max_outer_steps=40, seed=seed, batch_size=16, kl_warmup=0.0)
        res = train_meta(model, model.init_params(seed), tasks, c)
        per_step = np.array([loss for _, _, loss in res.trace]).reshape(40, 4).sum(1)
        # The summed query loss of single steps is noisy; compare short windows.
        wins += per_step[-5:].mean() < per_step[:5].mean()
    assert wins >= 9


def _full_objective(model, params, task):
    a, b = Batch.from_sequences(list(task.train_a), 0), Batch.from_sequences(list(task.train_b), 1)
    with torch.no_grad():
        loss, _ = model.call(params, "objective", a, b, seed=0)
    return float(loss)


def test_finetune_identities_and_loss_decrease(four_tasks):
    tasks, vocab = four_tasks
    model = small_vae(len(vocab))
    params = model.init_params(0)
    before = params_digest(params)
    assert params_digest(finetune(model, params, tasks[0], 0, 0.05)) == before
    assert params_digest(finetune(model, params, tasks[0], 20, 0.0)) == before
    with pytest.raises(InvalidArgument):
        finetune(model, params, tasks[0], -1, 0.05)
    trace = []
    tuned = finetune(model, params, tasks[0], 100, 0.05, trace=trace, batch_size=16)
    assert params_digest(params) == before and len(trace) == 100
    assert _full_objective(model, tuned, tasks[0]) <= _full_objective(model, params, tasks[0])


def test_pretrain_touches_only_the_language_model():
    tasks, vocab = synthetic_tasks(7, per_side=40, seed=2)
    for model in (small_vae(len(vocab)),
                  CrossAlign(CrossAlignConfig(vocab_size=len(vocab), embed_dim=8, hidden_dim=16, style_dim=4,
                                              disc_filters=4))):
        params = model.init_params(0)
        assert params_digest(pretrain_base(model, params, tasks, 0, 1e-2)) == params_digest(params)
        trace = []
        out = pretrain_base(model, params, tasks, 200, 1e-2, trace=trace, batch_size=16, kl_warmup=0.0)
        for n in params:
            if model.is_adversary(n):
                assert torch.equal(out[n], params[n]), n
        assert any(not torch.equal(out[n], params[n]) for n in params if not model.is_adversary(n))
        assert np.mean(trace[-20:]) < np.mean(trace[:20])
    with pytest.raises(EmptyCorpus):
        pooled_task([])


def test_objective_fn_wraps_step_data(four_tasks):
    tasks, vocab = four_tasks
    model = small_vae(len(vocab))
    a, b = next(pair_stream(tasks[0], "support", 4, 0))
    loss = objective_fn(model)(model.init_params(0), StepData(a, b, 3))
    direct, _ = model.call(model.init_params(0), "objective", a, b, seed=3)
    assert float(loss) == float(direct)
