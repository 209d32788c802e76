"""Few-shot comparison on one synthetic suite.

Four lexicon-swap tasks train the meta-learner; a fifth task is held out and
only 100 sentences per style are visible to the models. Three arms fine-tune
on that small sample with the same budget:

  st2         meta-trained initialization
  scratch     random initialization
  pretrained  language model pretrained on the pooled training tasks

and are scored with BLEU against references, self-BLEU, bigram-LM perplexity,
classifier transfer accuracy and style-embedding silhouette.

    python demos/fewshot_trend.py --seeds 0 1 2

One seed takes about two minutes on a single CPU.
"""
import argparse
import logging

import torch

from st2.experiments import SuiteConfig, run_trend_study


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--arms", nargs="+", default=["st2", "scratch", "pretrained"])
    p.add_argument("--meta-steps", type=int, default=None, help="override the outer step count")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    base = SuiteConfig()
    if args.meta_steps is not None:
        base.meta = {**base.meta, "max_outer_steps": args.meta_steps}

    def progress(seed, result):
        print(f"seed {seed}: classifier val acc {result.classifier_accuracy:.3f}")

    means, _ = run_trend_study(seeds=args.seeds, arms=args.arms, base=base, progress=progress)
    print(f"\n{'arm':<12}{'BLEU':>8}{'self':>8}{'PPL':>9}{'ACC':>7}{'sil':>8}")
    for arm, r in means.items():
        print(f"{arm:<12}{r.bleu_ref:8.2f}{r.bleu_self:8.2f}{r.ppl:9.2f}{r.acc:7.3f}{r.separation:8.3f}")


if __name__ == "__main__":
    main()
