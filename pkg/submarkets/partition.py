"""Hard community assignments and their file format."""

import csv
import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError


@dataclass(frozen=True, eq=False)
class Partition:
    """Community label per node, labels in [0, k).

    Partitions produced by modularity maximization are compact (every label
    in use). Block-model assignments keep labels aligned with the fitted
    groups and may leave a group empty; `compact()` renumbers them.
    """

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise DataError(f"labels must lie in [0, {self.k})")

    @classmethod
    def from_labels(cls, labels: Iterable[int]) -> "Partition":
        """Compact arbitrary labels, numbering communities by first appearance."""
        labels = np.asarray(list(labels), dtype=np.int64)
        if labels.size == 0:
            return cls(labels, 0)
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        return cls(rank[inverse], len(first))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_compact(self) -> bool:
        return len(np.unique(self.labels)) == self.k

    def compact(self) -> "Partition":
        return Partition.from_labels(self.labels)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def members(self, r: int) -> np.ndarray:
        return np.flatnonzero(self.labels == r)


def aligned_accuracy(truth: Partition, predicted: Partition) -> float:
    """Fraction of nodes labeled correctly under the best matching of labels."""
    if len(truth) != len(predicted):
        raise DataError("partitions cover different node counts")
    if len(truth) == 0:
        return 1.0
    confusion = np.zeros((truth.k, predicted.k), dtype=np.int64)
    np.add.at(confusion, (truth.labels, predicted.labels), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum()) / len(truth)


def format_partition(node_ids: Iterable[str], p: Partition, column: str = "community") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node_id", column])
    for node_id, label in zip(node_ids, p.labels):
        writer.writerow([node_id, int(label)])
    return buf.getvalue()


def read_labels(text: str) -> dict[str, int]:
    """Read a two-column `node_id,<label>` CSV with header into a mapping."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or len(header) != 2 or header[0] != "node_id":
        raise DataError("expected header 'node_id,<label>'")
    labels: dict[str, int] = {}
    for line_no, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"line {line_no}: expected 2 fields, got {len(row)}")
        try:
            labels[row[0]] = int(row[1])
        except ValueError:
            raise DataError(f"line {line_no}: non-integer label {row[1]!r}") from None
    return labels


def read_partition(text: str, node_ids: Iterable[str]) -> Partition:
    """Read a partition CSV and order it by node_ids."""
    labels = read_labels(text)
    try:
        values = [labels[node_id] for node_id in node_ids]
    except KeyError as e:
        raise DataError(f"node {e.args[0]!r} missing from partition") from None
    return Partition(np.asarray(values, dtype=np.int64), max(values, default=-1) + 1)
