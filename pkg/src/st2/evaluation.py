"""Transfer a task's test sentences with a trained base model and score them."""
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Batch, StyleTask, Vocabulary
from .errors import DegenerateGeometry, InvalidArgument
from .metrics import bleu, export_embeddings, separation_score, train_classifier, train_kn_lm, transfer_accuracy
from .metrics.lm import corpus_nll
from .metrics.report import MetricReport
from .models import strip_eos

DEFAULT_DECODE_LEN = 32


def transfer_sequences(model, params, task: StyleTask, sequences, target_style: int,
                       max_len: int = DEFAULT_DECODE_LEN, batch_size: int = 256, source_style: int = None):
    """Transfer token-id sequences into ``target_style`` (0 or 1) of ``task``.

    The VAE decodes with the target side's mean style embedding over the
    task's training sentences; CrossAlign decodes with the target label.
    ``source_style`` defaults to the opposite of the target.
    """
    if source_style is None:
        source_style = 1 - target_style if target_style in (0, 1) else None
    if target_style not in (0, 1) or source_style not in (0, 1):
        raise InvalidArgument("styles must be 0 or 1")
    sequences = list(sequences)
    if not sequences:
        return []
    if model.kind == "vae":
        target = model.call(params, "target_style_embedding", list(task.side(target_style)))
    else:
        target = target_style
    out = []
    for k in range(0, len(sequences), batch_size):
        chunk = sequences[k:k + batch_size]
        batch = Batch.from_sequences(chunk, source_style)
        out += [strip_eos(s) for s in model.call(params, "transfer", batch, target, max_len=max_len)]
    return out


@dataclass
class TaskEvaluators:
    """Target-domain scorers for one task: a classifier and one LM per style."""
    classifier: object
    lm_a: object
    lm_b: object

    @classmethod
    def fit(cls, lines_a, lines_b, seed: int = 0, classifier_epochs: int = 5, discount: float = 0.75):
        clf = train_classifier(list(lines_a) + list(lines_b), [0] * len(lines_a) + [1] * len(lines_b),
                               epochs=classifier_epochs, seed=seed)
        return cls(clf, train_kn_lm(lines_a, discount), train_kn_lm(lines_b, discount))


def evaluate_task(model, params, task: StyleTask, vocab: Vocabulary, evaluators: TaskEvaluators = None,
                  max_len: int = DEFAULT_DECODE_LEN, config_hash: str = "",
                  acc_mode: str = "threshold"):
    """Score the transfer of every test source into the opposite style.

    Returns the :class:`MetricReport` and the transferred sentences (token lists).
    BLEU-ref, self-BLEU and separation need only the task; PPL and ACC need
    ``evaluators``.
    """
    if not task.test_pairs:
        raise InvalidArgument(f"task {task.task_id} has no test pairs")
    sources = [p[0] for p in task.test_pairs]
    refs = [vocab.decode(p[1]) for p in task.test_pairs]
    src_labels = np.array([p[2] for p in task.test_pairs])
    outputs = [None] * len(sources)
    for label in (0, 1):
        idx = np.flatnonzero(src_labels == label)
        transferred = transfer_sequences(model, params, task, [sources[i] for i in idx], 1 - label, max_len)
        for i, seq in zip(idx, transferred):
            outputs[i] = vocab.decode(seq)
    originals = [vocab.decode(s) for s in sources]

    report = MetricReport(task_id=task.task_id, config_hash=config_hash,
                          counts={"test_pairs": len(sources)})
    report.bleu_ref = bleu(outputs, refs)
    report.bleu_self = bleu(outputs, originals)
    if evaluators is not None:
        total = count = 0
        for label, lm in ((0, evaluators.lm_b), (1, evaluators.lm_a)):
            t, c = corpus_nll(lm, [outputs[i] for i in np.flatnonzero(src_labels == label)])
            total, count = total + t, count + c
        report.ppl = math.exp(total / count)
        report.acc = transfer_accuracy(evaluators.classifier, outputs, 1 - src_labels, mode=acc_mode)
    table = export_embeddings(model, params, sources, src_labels)
    try:
        report.separation = separation_score(table.style, table.labels)
    except DegenerateGeometry:
        report.separation = None
    return report, outputs
