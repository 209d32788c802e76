"""``st2`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 diverged
adaptation. Seeds come from ``--seed``, the config file, or ``ST2_SEED``.
"""
import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from .checkpoint import build_model, load_checkpoint, make_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import (Vocabulary, build_vocab, dataset_files, encode_line, find_task, load_dataset, read_lines,
                     task_dirs)
from .errors import ConfigError, InvalidArgument, MissingDependency, ST2Error, UnknownTask
from .evaluation import TaskEvaluators, evaluate_task, transfer_sequences
from .meta import finetune, pretrain_base, train_meta
from .metrics import export_embeddings, train_classifier, train_kn_lm, write_embeddings_csv
from .metrics.classifier import TransferClassifier
from .metrics.report import average_reports
from .seeding import default_seed, substream
from .synthetic import KINDS, SyntheticTaskSpec, gen_synthetic

log = logging.getLogger("st2")

VOCAB_FILE = "vocab.txt"


# -- shared plumbing -------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.set, data=getattr(args, "data", None),
                         out=getattr(args, "out", None), seed=args.seed,
                         base_model=getattr(args, "base_model", None))
    if cfg.seed is None:
        cfg.seed = default_seed(0)
    return cfg


def _require_data(cfg: RunConfig) -> Path:
    if not cfg.data:
        raise ConfigError("data", "a dataset root is required (--data or 'data = ...')")
    root = Path(cfg.data)
    if not root.is_dir():
        raise ConfigError("data", f"dataset root {root} not found")
    return root


def _require_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("out", "an output directory is required (--out or 'out = ...')")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vocab(cfg: RunConfig) -> Vocabulary:
    """The run's vocabulary: ``<out>/vocab.txt`` if present, else built from the data and saved."""
    path = Path(cfg.out) / VOCAB_FILE if cfg.out else None
    if path is not None and path.is_file():
        return Vocabulary.load(path, cfg.section("corpus")["min_count"])
    vocab = build_vocab(dataset_files(_require_data(cfg)), cfg.section("corpus")["min_count"])
    if path is not None:
        _require_out(cfg)
        vocab.save(path)
    return vocab


def _tasks(cfg: RunConfig, vocab: Vocabulary):
    c = cfg.section("corpus")
    return load_dataset(_require_data(cfg), vocab, c["support_fraction"], substream(cfg.seed, "split"),
                        c["max_len"])


def _write_trace(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step", "task_id", "loss"])
        for step, task_id, loss in rows:
            w.writerow([step, task_id, repr(float(loss))])


def _start(cfg: RunConfig, vocab: Vocabulary, from_path):
    """Model template and starting parameters, from a checkpoint or a fresh init."""
    if from_path:
        ckpt = load_checkpoint(from_path)
        if ckpt.vocab.id_to_token != vocab.id_to_token:
            raise InvalidArgument(f"checkpoint {from_path} was built with a different vocabulary")
        return ckpt.model(), ckpt.params
    model = build_model(cfg.base_model, cfg.model_config(len(vocab)))
    return model, model.init_params(substream(cfg.seed, "init"))


def _save(kind, model, params, vocab, cfg, path, extra=None):
    ckpt = make_checkpoint(kind, model, params, vocab, cfg.to_dict(), cfg.config_hash(), extra)
    save_checkpoint(ckpt, path)
    log.info("wrote %s checkpoint %s", kind, path)
    return path


def _task_for_checkpoint(cfg: RunConfig, ckpt, task_id):
    task_id = task_id or ckpt.task_id
    if task_id is None:
        raise InvalidArgument("--task is required for a checkpoint that is not fine-tuned on one task")
    if not cfg.data:
        cfg.data = ckpt.run_config.get("data", "")
    c = cfg.section("corpus")
    tasks = load_dataset(_require_data(cfg), ckpt.vocab, c["support_fraction"], substream(cfg.seed, "split"),
                         c["max_len"])
    return find_task(tasks, task_id)


def _task_index(cfg: RunConfig) -> dict:
    """task_id -> task directory, in dataset order."""
    index = {}
    for d in task_dirs(_require_data(cfg)):
        meta = d / "meta.json"
        name = json.loads(meta.read_text(encoding="utf-8")).get("task_id", d.name) if meta.is_file() else d.name
        index[name] = d
    return index


def _task_dir(cfg: RunConfig, task_id):
    index = _task_index(cfg)
    if task_id not in index:
        raise UnknownTask(f"unknown task {task_id!r}; have {list(index)}")
    return index[task_id]


def _resolve(path_arg, default_dir, filename):
    """A file argument that may also name a directory holding ``filename``."""
    p = Path(path_arg) if path_arg else Path(default_dir)
    return p / filename if p.is_dir() else p


# -- subcommands -----------------------------------------------------------

def cmd_gen_synthetic(args):
    seed = args.seed if args.seed is not None else default_seed(0)
    spec = SyntheticTaskSpec(kind=args.kind, vocab_size=args.vocab_size, sentences_per_side=args.sentences,
                             test_pairs=args.test_pairs, min_len=args.min_len, max_len=args.max_len, seed=seed)
    dirs = gen_synthetic(spec, args.tasks, args.out)
    print(json.dumps({"out": str(args.out), "tasks": [d.name for d in dirs], "spec": asdict(spec)}, sort_keys=True))


def cmd_prepare(args):
    cfg = _run_config(args)
    out = _require_out(cfg)
    vocab_path = out / VOCAB_FILE
    vocab = build_vocab(dataset_files(_require_data(cfg)), cfg.section("corpus")["min_count"])
    vocab.save(vocab_path)
    tasks = _tasks(cfg, vocab)
    summary = {"vocab_size": len(vocab), "vocab": str(vocab_path), "config_hash": cfg.config_hash(),
               "tasks": [{"task_id": t.task_id, "style_a": t.style_a, "style_b": t.style_b,
                          "train": [len(t.train_a), len(t.train_b)], "test_pairs": len(t.test_pairs)}
                         for t in tasks]}
    (out / "dataset.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))


def cmd_train_meta(args):
    cfg = _run_config(args)
    out = _require_out(cfg)
    vocab = _vocab(cfg)
    tasks = _tasks(cfg, vocab)
    model, params = _start(cfg, vocab, args.init)
    meta_cfg = cfg.meta_config(substream(cfg.seed, "meta"))

    def checkpoint_fn(step, p):
        _save("meta", model, p, vocab, cfg, out / f"meta-step{step}.pt", {"outer_steps": step})

    result = train_meta(model, params, tasks, meta_cfg, checkpoint_fn=checkpoint_fn)
    _save("meta", model, result.params, vocab, cfg, out / "meta.pt", {"outer_steps": result.steps})
    _write_trace(out / "meta_trace.csv", result.trace)
    print(json.dumps({"checkpoint": str(out / "meta.pt"), "outer_steps": result.steps,
                      "config_hash": cfg.config_hash()}))


def cmd_pretrain(args):
    cfg = _run_config(args)
    out = _require_out(cfg)
    vocab = _vocab(cfg)
    tasks = _tasks(cfg, vocab)
    model, params = _start(cfg, vocab, args.init)
    s = cfg.section("pretrain")
    trace = []
    params = pretrain_base(model, params, tasks, s["steps"], s["lr"], substream(cfg.seed, "pretrain"),
                           s["batch_size"], s["optimizer"], s["kl_warmup"], trace)
    _save("pretrained", model, params, vocab, cfg, out / "pretrained.pt")
    _write_trace(out / "pretrain_trace.csv", [(i + 1, "pooled", x) for i, x in enumerate(trace)])
    print(json.dumps({"checkpoint": str(out / "pretrained.pt"), "steps": len(trace)}))


def cmd_finetune(args):
    cfg = _run_config(args)
    out = _require_out(cfg)
    vocab = load_checkpoint(args.init).vocab if args.init else _vocab(cfg)
    task = find_task(_tasks(cfg, vocab), args.task)
    model, params = _start(cfg, vocab, args.init)
    s = cfg.section("finetune")
    trace = []
    params = finetune(model, params, task, s["steps"], s["lr"], substream(cfg.seed, "finetune"),
                      s["batch_size"], s["optimizer"], s["kl_warmup"], trace)
    path = out / f"finetuned-{task.task_id}.pt"
    _save(f"finetuned:{task.task_id}", model, params, vocab, cfg, path, {"from": str(args.init or "init")})
    _write_trace(out / f"finetune-{task.task_id}_trace.csv", [(i + 1, task.task_id, x) for i, x in enumerate(trace)])
    print(json.dumps({"checkpoint": str(path), "steps": len(trace)}))


def cmd_transfer(args):
    cfg = _run_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    task = _task_for_checkpoint(cfg, ckpt, args.task)
    source, target = task.style_label(args.source_style), task.style_label(args.target_style)
    in_path = Path(args.input)
    if not in_path.is_file():
        raise MissingDependency(f"input file {in_path} not found")
    lines = in_path.read_text(encoding="utf-8").splitlines()
    max_len = cfg.section("corpus")["max_len"]
    seqs = [encode_line(line, ckpt.vocab, max_len) for line in lines]
    outputs = transfer_sequences(model, ckpt.params, task, seqs, target, cfg.section("eval")["max_len"],
                                 source_style=source)
    text = "".join(" ".join(ckpt.vocab.decode(s)) + "\n" for s in outputs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_classifier(path, task_id):
    if not path.is_file():
        raise MissingDependency(f"classifier checkpoint {path} not found; run train-classifier --task {task_id}")
    return TransferClassifier.load(path)


def _evaluate_one(cfg, args, task_id):
    ckpt_path = _resolve(args.checkpoint, cfg.out or ".", f"finetuned-{task_id}.pt")
    ckpt = load_checkpoint(ckpt_path)
    clf = _load_classifier(_resolve(args.classifier, cfg.out or ".", f"classifier-{task_id}.pt"), task_id)
    clf_hash = clf.meta.get("config_hash", "")
    if clf_hash != ckpt.config_hash and not args.force:
        raise ConfigError("config_hash", f"model ({ckpt.config_hash[:12]}) and classifier ({clf_hash[:12]}) "
                                         "come from different run configs; pass --force to evaluate anyway")
    model = ckpt.model()
    task = _task_for_checkpoint(cfg, ckpt, task_id)
    e = cfg.section("eval")
    d = _task_dir(cfg, task_id)
    evaluators = TaskEvaluators(clf, train_kn_lm(read_lines(d / "a.train.txt"), e["discount"]),
                                train_kn_lm(read_lines(d / "b.train.txt"), e["discount"]))
    report, _ = evaluate_task(model, ckpt.params, task, ckpt.vocab, evaluators, e["max_len"],
                              ckpt.config_hash, e["acc_mode"])
    return report


def cmd_evaluate(args):
    cfg = _run_config(args)
    if args.all_tasks == bool(args.task):
        raise InvalidArgument("give exactly one of --task and --all-tasks")
    if args.task:
        report = _evaluate_one(cfg, args, args.task)
        per_task = []
    else:
        per_task = [_evaluate_one(cfg, args, tid) for tid in _task_index(cfg)]
        report = average_reports(per_task)
    if args.report:
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        report.to_json(path)
        for r in per_task:
            r.to_json(path.with_name(f"{path.stem}.{r.task_id}{path.suffix}"))
    print(report.to_json())


def cmd_train_classifier(args):
    cfg = _run_config(args)
    out = _require_out(cfg)
    s = cfg.section("classifier")
    index = _task_index(cfg)
    if args.task:
        index = {args.task: _task_dir(cfg, args.task)}
    results = {}
    for task_id, d in index.items():
        lines_a, lines_b = read_lines(d / "a.train.txt"), read_lines(d / "b.train.txt")
        clf = train_classifier(lines_a + lines_b, [0] * len(lines_a) + [1] * len(lines_b), epochs=s["epochs"],
                               seed=substream(cfg.seed, "classifier", task_id), val_fraction=s["val_fraction"],
                               batch_size=s["batch_size"], lr=s["lr"])
        clf.meta.update(task_id=task_id, config_hash=cfg.config_hash())
        clf.save(out / f"classifier-{task_id}.pt")
        results[task_id] = clf.val_accuracy
    print(json.dumps({"val_accuracy": results}, sort_keys=True))


def cmd_export_embeddings(args):
    cfg = _run_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    task = _task_for_checkpoint(cfg, ckpt, args.task)
    if args.split == "test":
        seqs, labels = [p[0] for p in task.test_pairs], [p[2] for p in task.test_pairs]
    else:
        seqs = list(task.train_a) + list(task.train_b)
        labels = [0] * len(task.train_a) + [1] * len(task.train_b)
    if args.limit:
        seqs, labels = seqs[:args.limit], labels[:args.limit]
    if not seqs:
        raise InvalidArgument(f"task {task.task_id} has no {args.split} sentences")
    table = export_embeddings(model, ckpt.params, seqs, labels)
    write_embeddings_csv(table, args.output)
    print(json.dumps({"rows": len(seqs), "output": str(args.output)}))


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable; wins over the file)")
    common.add_argument("--seed", type=int, help="root seed (default: config, then $ST2_SEED, then 0)")
    common.add_argument("--jobs", type=int, default=1, help="torch intra-op threads (default 1, deterministic)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset root (one directory per task)")
    data.add_argument("--out", help="output directory")
    data.add_argument("--base-model", choices=("vae", "crossalign"))

    p = argparse.ArgumentParser(prog="st2", description="Few-shot text style transfer with meta-learning.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic style-pair dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--kind", choices=KINDS, default="lexicon-swap")
    g.add_argument("--tasks", type=int, default=5)
    g.add_argument("--vocab-size", type=int, default=200)
    g.add_argument("--sentences", type=int, default=2000, help="training sentences per style")
    g.add_argument("--test-pairs", type=int, default=200)
    g.add_argument("--min-len", type=int, default=5)
    g.add_argument("--max-len", type=int, default=10)
    g.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("prepare", parents=[common, data], help="build the vocabulary and check every task")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train-meta", parents=[common, data], help="meta-train over every task")
    s.add_argument("--init", help="start from this checkpoint (e.g. a pretrained one)")
    s.set_defaults(func=cmd_train_meta)

    s = sub.add_parser("pretrain", parents=[common, data], help="pretrain the language-model part on pooled tasks")
    s.add_argument("--init", help="start from this checkpoint")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", parents=[common, data], help="fine-tune on one task")
    s.add_argument("--task", required=True)
    s.add_argument("--from", dest="init", help="starting checkpoint (default: fresh initialization)")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("transfer", parents=[common, data], help="transfer sentences between a task's styles")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="one sentence per line")
    s.add_argument("--output", help="output file (default: stdout)")
    s.add_argument("--source-style", required=True)
    s.add_argument("--target-style", required=True)
    s.add_argument("--task", help="task id (default: the checkpoint's fine-tuning task)")
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("evaluate", parents=[common, data], help="score transfers of a task's test set")
    s.add_argument("--checkpoint", help="checkpoint file, or a directory holding finetuned-<task>.pt (default: --out)")
    s.add_argument("--classifier", help="classifier file, or a directory holding classifier-<task>.pt (default: --out)")
    s.add_argument("--task")
    s.add_argument("--all-tasks", action="store_true", help="evaluate every task and average the reports")
    s.add_argument("--report", help="write the report JSON here (per-task reports alongside)")
    s.add_argument("--force", action="store_true", help="allow model and classifier from different configs")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("train-classifier", parents=[common, data], help="train the style classifier of each task")
    s.add_argument("--task", help="only this task")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("export-embeddings", parents=[common, data], help="write style/content codes as CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--task")
    s.add_argument("--split", choices=("test", "train"), default="test")
    s.add_argument("--limit", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    torch.set_num_threads(args.jobs)
    try:
        args.func(args)
    except ST2Error as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
