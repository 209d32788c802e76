"""Meta-gradients on the quadratic family L_a(theta) = (theta - a)^2.

One inner step gives theta' = theta - 2 alpha (theta - a), and the true
meta-gradient is 2 (theta' - a)(1 - 2 alpha). First-order MAML drops the
(1 - 2 alpha) factor. The table prints both next to the closed form for a few
step sizes; the gap closes as alpha shrinks.

    python demos/meta_gradient.py
"""
from collections import OrderedDict

import torch

from st2.meta import Episode, MetaConfig, task_gradient


def quadratic(params, a):
    return ((params["theta"] - a) ** 2).sum()


def main():
    theta0, a = 1.5, -0.5
    params = OrderedDict(theta=torch.tensor([theta0], dtype=torch.float64))
    episode = Episode("quadratic", [a], a)
    print(f"theta = {theta0}, a = {a}")
    print(f"{'alpha':>8}{'closed form':>14}{'second':>14}{'first':>14}")
    for alpha in (0.4, 0.25, 0.1, 0.01, 1e-5):
        adapted = theta0 - 2 * alpha * (theta0 - a)
        exact = 2 * (adapted - a) * (1 - 2 * alpha)
        grads = {order: float(task_gradient(quadratic, params, episode,
                                            MetaConfig(inner_lr=alpha, inner_steps=1, order=order)).grad["theta"])
                 for order in ("second", "first")}
        print(f"{alpha:>8g}{exact:>14.8f}{grads['second']:>14.8f}{grads['first']:>14.8f}")


if __name__ == "__main__":
    main()
