"""Confusion matrix with per-class recall/precision and overall accuracy.

Rows are predicted classes, columns are true classes. Ratios whose
denominator is zero are reported as ``None`` ("undefined"), never 0 or 1.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

UNDEFINED = None


def _ratio(num, den):
    return UNDEFINED if den == 0 else num / den


class ConfusionMatrix:
    def __init__(self, n_classes: int, counts=None, labels=None):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.c = int(n_classes)
        if counts is None:
            counts = np.zeros((self.c, self.c), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (self.c, self.c) or np.any(counts < 0):
            raise ValueError("counts must be a non-negative c x c matrix")
        self.counts = counts
        self.labels = list(labels) if labels is not None else [str(i) for i in range(self.c)]

    @classmethod
    def from_predictions(cls, predicted, actual, n_classes: int, labels=None) -> "ConfusionMatrix":
        cm = cls(n_classes, labels=labels)
        predicted = np.asarray(predicted)
        actual = np.asarray(actual)
        cm._check(predicted)
        cm._check(actual)
        np.add.at(cm.counts, (predicted, actual), 1)
        return cm

    def _check(self, cls_ids):
        cls_ids = np.asarray(cls_ids)
        if cls_ids.size and (cls_ids.min() < 0 or cls_ids.max() >= self.c):
            raise ValueError(f"class id out of range [0, {self.c})")

    def accumulate(self, predicted: int, actual: int) -> "ConfusionMatrix":
        self._check([predicted, actual])
        self.counts[predicted, actual] += 1
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.c != self.c:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.c, self.counts + other.counts, self.labels)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recall(self, i: int):
        return _ratio(self.counts[i, i], self.counts[:, i].sum())

    def precision(self, i: int):
        return _ratio(self.counts[i, i], self.counts[i, :].sum())

    def accuracy(self):
        return _ratio(np.trace(self.counts), self.total)

    def specificity(self, negative: int = 0):
        """Two-class specificity ``tn / (tn + fp)``; equals recall of the negative class."""
        if self.c != 2:
            raise ValueError("specificity is defined for two-class problems")
        return self.recall(negative)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    __hash__ = None

    def __repr__(self):
        return f"ConfusionMatrix(c={self.c}, total={self.total})"

    # -- rendering ----------------------------------------------------------

    def table(self):
        """Rows of cells for rendering.

        ``c`` data rows of ``(count, percent_of_total)`` with a trailing
        row-correct fraction, then one bottom row of column-correct fractions
        ending with overall accuracy.
        """
        total = self.total
        rows = []
        for i in range(self.c):
            cells = [(int(self.counts[i, j]), _ratio(100.0 * self.counts[i, j], total))
                     for j in range(self.c)]
            rows.append((cells, self.precision(i)))
        bottom = [self.recall(j) for j in range(self.c)]
        return rows, bottom, self.accuracy()

    def render(self) -> str:
        rows, bottom, acc = self.table()

        def pct(x):
            return "undef" if x is UNDEFINED else f"{100.0 * x:.1f}%"

        width = max(14, *(len(l) + 2 for l in self.labels))
        out = io.StringIO()
        out.write("pred\\true".ljust(width) + "".join(l.rjust(width) for l in self.labels)
                  + "correct".rjust(width) + "\n")
        for label, (cells, right) in zip(self.labels, rows):
            txt = "".join(
                f"{n} ({'undef' if p is UNDEFINED else f'{p:.1f}%'})".rjust(width) for n, p in cells
            )
            out.write(label.ljust(width) + txt + pct(right).rjust(width) + "\n")
        out.write("correct".ljust(width) + "".join(pct(b).rjust(width) for b in bottom)
                  + pct(acc).rjust(width) + "\n")
        return out.getvalue()

    def to_csv(self, path=None) -> str:
        """CSV export: true-class header, one row per predicted class, then the
        per-row correct percentage column and a bottom correct-percentage row.
        Undefined ratios are written as empty cells."""
        rows, bottom, acc = self.table()

        def pct(x):
            return "" if x is UNDEFINED else f"{100.0 * x:.1f}"

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predicted\\true", *self.labels, "correct_pct"])
        for label, (cells, right) in zip(self.labels, rows):
            w.writerow([label, *(n for n, _ in cells), pct(right)])
        w.writerow(["correct_pct", *(pct(b) for b in bottom), pct(acc)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "ConfusionMatrix":
        """Parse the output of :meth:`to_csv` (a path or the CSV text)."""
        text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else source
        rows = list(csv.reader(io.StringIO(text)))
        labels = rows[0][1:-1]
        c = len(labels)
        counts = [[int(v) for v in row[1:c + 1]] for row in rows[1:c + 1]]
        return cls(c, counts, labels)
