from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from setmlp.metrics import UNDEFINED, ConfusionMatrix


def two_class():
    # rows predicted, columns true: tn=6, fn=1, fp=1, tp=2
    return ConfusionMatrix(2, [[6, 1], [1, 2]], labels=["neg", "pos"])


def test_accumulate_layout():
    cm = ConfusionMatrix(2).accumulate(1, 1)
    assert cm.counts.tolist() == [[0, 0], [0, 1]]
    cm = ConfusionMatrix(3)
    for _ in range(3):
        cm.accumulate(0, 0)
    assert cm.counts[0, 0] == 3


def test_accumulate_out_of_range():
    with pytest.raises(ValueError):
        ConfusionMatrix(2).accumulate(2, 0)
    with pytest.raises(ValueError):
        ConfusionMatrix(2).accumulate(0, -1)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=200))
def test_accumulate_matches_tally(pairs):
    cm = ConfusionMatrix(4)
    for p, a in pairs:
        cm.accumulate(p, a)
    tally = Counter(pairs)
    for (p, a), n in tally.items():
        assert cm.counts[p, a] == n
    assert cm.total == len(pairs)
    if pairs:
        shuffled = list(reversed(pairs))
        vec = ConfusionMatrix.from_predictions([p for p, _ in shuffled], [a for _, a in shuffled], 4)
        assert vec == cm


def test_perfect_diagonal():
    cm = ConfusionMatrix(3, np.diag([4, 2, 7]))
    assert cm.accuracy() == 1
    assert all(cm.recall(i) == 1 and cm.precision(i) == 1 for i in range(3))


def test_two_class_measures():
    cm = two_class()
    assert cm.precision(1) == pytest.approx(2 / 3)
    assert cm.recall(1) == pytest.approx(2 / 3)
    assert cm.accuracy() == pytest.approx(0.8)
    assert cm.specificity() == pytest.approx(6 / 7)


def test_undefined_recall():
    cm = ConfusionMatrix(3, [[2, 0, 0], [1, 0, 0], [0, 0, 3]])
    assert cm.recall(1) is UNDEFINED
    assert cm.precision(1) == 0.0
    assert ConfusionMatrix(2).accuracy() is UNDEFINED


def test_specificity_requires_two_classes():
    with pytest.raises(ValueError):
        ConfusionMatrix(3).specificity()


def test_render_single_cell():
    text = ConfusionMatrix(1, [[5]]).render()
    assert "5 (100.0%)" in text


def test_render_margins():
    rows, bottom, acc = two_class().table()
    assert bottom == pytest.approx([6 / 7, 2 / 3])
    assert [r[1] for r in rows] == pytest.approx([6 / 7, 2 / 3])
    text = two_class().render()
    assert "85.7%" in text and "66.7%" in text and "80.0%" in text


@given(st.lists(st.lists(st.integers(0, 50), min_size=3, max_size=3), min_size=3, max_size=3))
def test_margins_consistent(counts):
    cm = ConfusionMatrix(3, counts)
    rows, bottom, acc = cm.table()
    colsum = cm.counts.sum(axis=0)
    # sum_i recall_i * colsum_i reconstructs the trace
    recon = sum(r * c for r, c in zip(bottom, colsum) if r is not UNDEFINED)
    assert recon == pytest.approx(np.trace(cm.counts))
    cells = sum(n for r in rows for n, _ in r[0])
    assert cells == cm.total


def test_accuracy_permutation_invariant():
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 20, (4, 4))
    perm = rng.permutation(4)
    a = ConfusionMatrix(4, counts).accuracy()
    b = ConfusionMatrix(4, counts[np.ix_(perm, perm)]).accuracy()
    assert a == b


def test_merge():
    a = ConfusionMatrix.from_predictions([0, 1], [0, 0], 2)
    b = ConfusionMatrix.from_predictions([1], [1], 2)
    assert a.merge(b).counts.tolist() == [[1, 0], [1, 1]]


def test_csv_round_trip(tmp_path):
    cm = two_class()
    text = cm.to_csv(tmp_path / "cm.csv")
    lines = text.splitlines()
    assert lines[0] == "predicted\\true,neg,pos,correct_pct"
    assert lines[1] == "neg,6,1,85.7"
    assert lines[3] == "correct_pct,85.7,66.7,80.0"
    back = ConfusionMatrix.from_csv(tmp_path / "cm.csv")
    assert back == cm
    assert back.accuracy() == cm.accuracy()
    assert back.labels == ["neg", "pos"]
