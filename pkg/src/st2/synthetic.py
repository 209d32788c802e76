"""Synthetic style-pair tasks for desk-scale experiments.

All tasks share one "content language": a sparse random Markov chain over
content words ``c000 ...``. Each task then applies its own style
transformation built from marker words ``m00 ...``:

lexicon-swap
    every sentence carries one or two inserted markers; style a draws them
    from the task's list A, style b from the aligned list B.
affix-marker
    style b appends the task's suffix marker; style a ends with the
    task's other marker.
synonym-table
    style b rewrites a task-specific set of content words into synonyms.

Test pairs are exact parallel rewrites of the same content.
"""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, RefusingOverwrite
from .seeding import substream

KINDS = ("lexicon-swap", "affix-marker", "synonym-table")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    kind: str = "lexicon-swap"
    vocab_size: int = 200
    sentences_per_side: int = 2000
    test_pairs: int = 200
    min_len: int = 5
    max_len: int = 10
    seed: int = 0
    marker_pool: int = 40
    markers_per_task: int = 5
    fanout: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.vocab_size - self.marker_pool < 10:
            raise InvalidArgument("vocab_size must exceed marker_pool by at least 10")
        if self.marker_pool < 2 * self.markers_per_task:
            raise InvalidArgument("marker_pool must hold two disjoint marker lists")
        if not 1 <= self.min_len <= self.max_len:
            raise InvalidArgument("need 1 <= min_len <= max_len")
        if self.sentences_per_side < 1 or self.test_pairs < 0:
            raise InvalidArgument("sentences_per_side must be >= 1 and test_pairs >= 0")


@dataclass
class TaskText:
    task_id: str
    style_a: str
    style_b: str
    lines_a: list
    lines_b: list
    test: list  # (source, reference, source label)
    meta: dict


class ContentLanguage:
    def __init__(self, spec: SyntheticTaskSpec):
        rng = np.random.default_rng(substream(spec.seed, "language"))
        self.n = spec.vocab_size - spec.marker_pool
        self.words = [f"c{i:03d}" for i in range(self.n)]
        self.start = rng.dirichlet(np.ones(self.n))
        self.succ = np.stack([rng.choice(self.n, spec.fanout, replace=False) for _ in range(self.n)])
        self.succ_p = rng.dirichlet(np.ones(spec.fanout), size=self.n)
        self.spec = spec

    def sentence(self, rng) -> list:
        length = int(rng.integers(self.spec.min_len, self.spec.max_len + 1))
        w = int(rng.choice(self.n, p=self.start))
        out = [w]
        for _ in range(length - 1):
            w = int(self.succ[w][rng.choice(self.spec.fanout, p=self.succ_p[w])])
            out.append(w)
        return [self.words[i] for i in out]


def _lexicon(spec, rng):
    pool = [f"m{i:02d}" for i in range(spec.marker_pool)]
    chosen = rng.choice(len(pool), 2 * spec.markers_per_task, replace=False)
    a = [pool[i] for i in chosen[:spec.markers_per_task]]
    b = [pool[i] for i in chosen[spec.markers_per_task:]]
    return a, b


def _style_pair_fn(spec, lang, rng):
    """Return (render(content, rng) -> (sentence_a, sentence_b), task metadata)."""
    if spec.kind == "lexicon-swap":
        a, b = _lexicon(spec, rng)

        def render(content, r):
            sa, sb = list(content), list(content)
            for _ in range(int(r.integers(1, 3))):
                i = int(r.integers(len(a)))
                pos = int(r.integers(len(sa) + 1))
                sa.insert(pos, a[i])
                sb.insert(pos, b[i])
            return sa, sb
        return render, {"markers_a": a, "markers_b": b}

    if spec.kind == "affix-marker":
        a, b = _lexicon(spec, rng)

        def render(content, r):
            return list(content) + [a[0]], list(content) + [b[0]]
        return render, {"suffix_a": a[0], "suffix_b": b[0]}

    pool = [f"m{i:02d}" for i in range(spec.marker_pool)]
    n_syn = min(2 * spec.markers_per_task, spec.marker_pool, lang.n)
    sources = rng.choice(lang.n, n_syn, replace=False)
    targets = rng.choice(len(pool), n_syn, replace=False)
    table = {lang.words[s]: pool[t] for s, t in zip(sources, targets)}

    def render(content, r):
        return list(content), [table.get(w, w) for w in content]
    return render, {"synonyms": table}


def generate_task(spec: SyntheticTaskSpec, index: int, sentences_per_side: int = None) -> TaskText:
    """Deterministic task ``index`` of the family defined by ``spec``."""
    lang = ContentLanguage(spec)
    rng = np.random.default_rng(substream(spec.seed, "task", index))
    render, meta = _style_pair_fn(spec, lang, rng)
    n = spec.sentences_per_side if sentences_per_side is None else sentences_per_side
    data_rng = np.random.default_rng(substream(spec.seed, "task", index, "train"))
    # Sides are rendered from independent content draws, so they are nonparallel.
    lines_a = [" ".join(render(lang.sentence(data_rng), data_rng)[0]) for _ in range(n)]
    lines_b = [" ".join(render(lang.sentence(data_rng), data_rng)[1]) for _ in range(n)]
    test_rng = np.random.default_rng(substream(spec.seed, "task", index, "test"))
    test = []
    for k in range(spec.test_pairs):
        sa, sb = render(lang.sentence(test_rng), test_rng)
        if k % 2 == 0:
            test.append((" ".join(sa), " ".join(sb), 0))
        else:
            test.append((" ".join(sb), " ".join(sa), 1))
    task_id = f"task{index:02d}"
    meta.update(task_id=task_id, style_a=f"{task_id}.a", style_b=f"{task_id}.b", kind=spec.kind)
    return TaskText(task_id, meta["style_a"], meta["style_b"], lines_a, lines_b, test, meta)


def write_task(text: TaskText, out_dir):
    d = Path(out_dir) / text.task_id
    d.mkdir(parents=True, exist_ok=True)
    (d / "a.train.txt").write_text("\n".join(text.lines_a) + "\n", encoding="utf-8")
    (d / "b.train.txt").write_text("\n".join(text.lines_b) + "\n", encoding="utf-8")
    (d / "test.tsv").write_text("".join(f"{s}\t{r}\t{l}\n" for s, r, l in text.test), encoding="utf-8")
    (d / "meta.json").write_text(json.dumps(text.meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def gen_synthetic(spec: SyntheticTaskSpec, n_tasks: int, out_dir) -> list:
    """Write ``n_tasks`` task directories plus ``spec.json`` under ``out_dir``."""
    out = Path(out_dir)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise RefusingOverwrite(f"output directory {out} exists and is not empty")
    if n_tasks < 1:
        raise InvalidArgument("n_tasks must be >= 1")
    out.mkdir(parents=True, exist_ok=True)
    dirs = [write_task(generate_task(spec, i), out) for i in range(n_tasks)]
    (out / "spec.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return dirs
