import filecmp
import json

import pytest

from st2.errors import InvalidArgument, RefusingOverwrite
from st2.synthetic import KINDS, SyntheticTaskSpec, gen_synthetic, generate_task


def _tree(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*"))


def test_same_spec_gives_byte_identical_trees(tmp_path):
    spec = SyntheticTaskSpec(sentences_per_side=30, test_pairs=6, seed=4)
    gen_synthetic(spec, 3, tmp_path / "x")
    gen_synthetic(spec, 3, tmp_path / "y")
    assert _tree(tmp_path / "x") == _tree(tmp_path / "y")
    for rel in _tree(tmp_path / "x"):
        if (tmp_path / "x" / rel).is_file():
            assert filecmp.cmp(tmp_path / "x" / rel, tmp_path / "y" / rel, shallow=False), rel


def test_minimal_tree_layout(tmp_path):
    dirs = gen_synthetic(SyntheticTaskSpec(sentences_per_side=10, test_pairs=2), 1, tmp_path / "d")
    assert [d.name for d in dirs] == ["task00"]
    assert sorted(p.name for p in dirs[0].iterdir()) == ["a.train.txt", "b.train.txt", "meta.json", "test.tsv"]
    assert len((dirs[0] / "a.train.txt").read_text().splitlines()) == 10
    assert json.loads((tmp_path / "d" / "spec.json").read_text())["sentences_per_side"] == 10


def test_refuses_nonempty_output(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "keep.txt").write_text("x")
    with pytest.raises(RefusingOverwrite):
        gen_synthetic(SyntheticTaskSpec(sentences_per_side=5), 1, tmp_path / "d")


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        SyntheticTaskSpec(kind="rhyme")
    with pytest.raises(InvalidArgument):
        SyntheticTaskSpec(min_len=5, max_len=3)


@pytest.mark.parametrize("kind", KINDS)
def test_test_pairs_are_parallel_rewrites(kind):
    text = generate_task(SyntheticTaskSpec(kind=kind, sentences_per_side=20, test_pairs=20, seed=1), 2)
    assert len(text.test) == 20 and {label for _, _, label in text.test} == {0, 1}
    differ = 0
    for src, ref, label in text.test:
        s, r = src.split(), ref.split()
        if kind == "synonym-table":
            table = text.meta["synonyms"]
            plain, rewritten = (s, r) if label == 0 else (r, s)
            assert len(s) == len(r)
            assert all(b == table.get(a, a) for a, b in zip(plain, rewritten))
        else:
            assert [w for w in s if not w.startswith("m")] == [w for w in r if not w.startswith("m")]
        differ += s != r
    assert differ >= (5 if kind == "synonym-table" else 20)


def test_lexicon_swap_sides_use_their_own_markers():
    text = generate_task(SyntheticTaskSpec(sentences_per_side=200, test_pairs=0, seed=2), 0)
    ma, mb = set(text.meta["markers_a"]), set(text.meta["markers_b"])
    assert ma.isdisjoint(mb)
    words_a = {w for line in text.lines_a for w in line.split()}
    words_b = {w for line in text.lines_b for w in line.split()}
    assert words_a & ma and not words_a & mb
    assert words_b & mb and not words_b & ma


def test_paper_shaped_family_sizes():
    spec = SyntheticTaskSpec(sentences_per_side=10_000, test_pairs=1_000)
    text = generate_task(spec, 6)
    assert len(text.lines_a) == len(text.lines_b) == 10_000 and len(text.test) == 1_000
