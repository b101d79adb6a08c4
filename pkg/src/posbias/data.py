"""Pairwise comparison records, CSV I/O and the sparse design operators.

Each record is a directed edge ``(annotator, left, right)`` carrying a signed
response, positive when the left item was preferred.  With this orientation
the annotator column of the design carries ``+1`` on every edge, so a
positive annotator bias means a tendency to click the left item.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import DatasetError

HEADER = ("annotator", "left", "right", "response")

__all__ = [
    "ComparisonRecord",
    "ComparisonDataset",
    "DesignOperators",
    "parse_dataset",
    "read_dataset",
    "write_dataset",
    "build_operators",
    "connected_components",
    "left_right_counts",
    "format_number",
]


@dataclass(frozen=True)
class ComparisonRecord:
    annotator: str
    left: str
    right: str
    response: float

    def __post_init__(self):
        if self.left == self.right:
            raise DatasetError(f"self-comparison of item {self.left!r}")
        if not math.isfinite(self.response):
            raise DatasetError(f"non-finite response {self.response!r}")


class ComparisonDataset:
    """Edge list of pairwise judgments with item and annotator registries.

    Registries are built in first-appearance order and records keep their
    input order; duplicated ``(annotator, left, right)`` triples are
    distinct edges.

    Parameters
    ----------
    items, annotators : sequence of str
        Registry keys, position = index.
    annot_idx, left_idx, right_idx : array_like of int, shape (n_edges,)
        Per-record indices into the registries.
    response : array_like of float, shape (n_edges,)
        Signed responses.
    """

    def __init__(self, items, annotators, annot_idx, left_idx, right_idx, response):
        self.items = tuple(items)
        self.annotators = tuple(annotators)
        if len(set(self.items)) != len(self.items):
            raise DatasetError("duplicate item keys in registry")
        if len(set(self.annotators)) != len(self.annotators):
            raise DatasetError("duplicate annotator keys in registry")
        self.annot_idx = np.asarray(annot_idx, dtype=np.int64)
        self.left_idx = np.asarray(left_idx, dtype=np.int64)
        self.right_idx = np.asarray(right_idx, dtype=np.int64)
        self.response = np.asarray(response, dtype=float)
        n = self.response.shape[0]
        for arr in (self.annot_idx, self.left_idx, self.right_idx):
            if arr.shape != (n,):
                raise DatasetError("index arrays must all have shape (n_edges,)")
        if n:
            if self.left_idx.min() < 0 or max(self.left_idx.max(), self.right_idx.max()) >= len(self.items):
                raise DatasetError("item index out of registry range")
            if self.right_idx.min() < 0:
                raise DatasetError("item index out of registry range")
            if self.annot_idx.min() < 0 or self.annot_idx.max() >= len(self.annotators):
                raise DatasetError("annotator index out of registry range")
            if np.any(self.left_idx == self.right_idx):
                k = int(np.flatnonzero(self.left_idx == self.right_idx)[0])
                raise DatasetError(f"record {k} compares an item with itself")
            if not np.all(np.isfinite(self.response)):
                raise DatasetError("non-finite response")
        for arr in (self.annot_idx, self.left_idx, self.right_idx, self.response):
            arr.setflags(write=False)

    @classmethod
    def from_records(cls, records: Iterable[ComparisonRecord]) -> "ComparisonDataset":
        items: dict[str, int] = {}
        annotators: dict[str, int] = {}
        a, l, r, y = [], [], [], []
        for rec in records:
            a.append(annotators.setdefault(rec.annotator, len(annotators)))
            l.append(items.setdefault(rec.left, len(items)))
            r.append(items.setdefault(rec.right, len(items)))
            y.append(float(rec.response))
        return cls(list(items), list(annotators), a, l, r, y)

    @property
    def n_edges(self) -> int:
        return int(self.response.shape[0])

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_annotators(self) -> int:
        return len(self.annotators)

    def __len__(self):
        return self.n_edges

    @cached_property
    def records(self) -> list[ComparisonRecord]:
        it, an = self.items, self.annotators
        return [
            ComparisonRecord(an[a], it[l], it[r], float(y))
            for a, l, r, y in zip(self.annot_idx, self.left_idx, self.right_idx, self.response)
        ]

    @property
    def is_dichotomous(self) -> bool:
        return bool(np.all(np.abs(self.response) == 1.0))

    def annotator_index(self, key: str) -> int:
        try:
            return self.annotators.index(key)
        except ValueError:
            raise KeyError(f"unknown annotator {key!r}") from None

    def item_index(self, key: str) -> int:
        try:
            return self.items.index(key)
        except ValueError:
            raise KeyError(f"unknown item {key!r}") from None

    def __eq__(self, other):
        if not isinstance(other, ComparisonDataset):
            return NotImplemented
        return (
            self.items == other.items
            and self.annotators == other.annotators
            and np.array_equal(self.annot_idx, other.annot_idx)
            and np.array_equal(self.left_idx, other.left_idx)
            and np.array_equal(self.right_idx, other.right_idx)
            and np.array_equal(self.response, other.response)
        )

    def __repr__(self):
        return (
            f"ComparisonDataset(n_edges={self.n_edges}, n_items={self.n_items}, "
            f"n_annotators={self.n_annotators})"
        )


def _parse_response(text, lineno):
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"non-numeric response {text!r}", lineno) from None
    if not math.isfinite(value):
        raise DatasetError(f"non-finite response {text!r}", lineno)
    return value


def parse_dataset(stream: TextIO | str, format: str = "csv") -> ComparisonDataset:
    """Parse ``annotator,left,right,response`` CSV text.

    Lines starting with ``#`` and blank lines are ignored.  The first
    remaining line must be the header.

    Parameters
    ----------
    stream : file-like or str
        Text stream, or the CSV content itself.
    format : {"csv"}
        Only CSV is supported.

    Raises
    ------
    DatasetError
        On a missing/incorrect header, wrong field count, self-comparison,
        or a non-numeric response.  The message carries the line number.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    items: dict[str, int] = {}
    annotators: dict[str, int] = {}
    a, l, r, y = [], [], [], []
    header_seen = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split(",")
        if not header_seen:
            if tuple(f.strip() for f in fields) != HEADER:
                raise DatasetError(f"expected header {','.join(HEADER)!r}, got {line!r}", lineno)
            header_seen = True
            continue
        if len(fields) != 4:
            raise DatasetError(f"expected 4 fields, got {len(fields)}", lineno)
        ann, left, right, resp = (f.strip() for f in fields)
        if not ann or not left or not right:
            raise DatasetError("empty key", lineno)
        if left == right:
            raise DatasetError(f"self-comparison of item {left!r}", lineno)
        value = _parse_response(resp, lineno)
        a.append(annotators.setdefault(ann, len(annotators)))
        l.append(items.setdefault(left, len(items)))
        r.append(items.setdefault(right, len(items)))
        y.append(value)
    if not header_seen:
        raise DatasetError("empty input: missing header")
    return ComparisonDataset(list(items), list(annotators), a, l, r, y)


def read_dataset(path) -> ComparisonDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_dataset(fh)


def format_number(x: float) -> str:
    """Shortest round-tripping plain-notation rendering of a float."""
    x = float(x)
    if x == 0.0:
        return "0"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return np.format_float_positional(x, unique=True, trim="-")


def write_dataset(ds: ComparisonDataset, stream: TextIO) -> None:
    """Serialize to the CSV format read by :func:`parse_dataset`."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HEADER)
    it, an = ds.items, ds.annotators
    for a, l, r, y in zip(ds.annot_idx, ds.left_idx, ds.right_idx, ds.response):
        writer.writerow((an[a], it[l], it[r], format_number(y)))


@dataclass(frozen=True)
class DesignOperators:
    """Sparse operators of the model ``Y = grad @ theta + annot @ gamma + noise``.

    ``grad`` is the edge-item gradient (one ``+1`` for the left item, one
    ``-1`` for the right item per row) and ``annot`` maps annotator biases
    to edges.  ``annot`` may be replaced by a dense extended design (e.g.
    originals plus knockoffs) with :meth:`with_annot`.
    """

    grad: sp.csr_matrix
    annot: sp.csr_matrix | np.ndarray
    component_labels: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return self.grad.shape[0]

    @property
    def n_items(self) -> int:
        return self.grad.shape[1]

    @property
    def n_coords(self) -> int:
        return self.annot.shape[1]

    @property
    def n_components(self) -> int:
        if self.component_labels.size == 0:
            return 0
        return int(self.component_labels.max()) + 1

    def with_annot(self, annot) -> "DesignOperators":
        if annot.shape[0] != self.n_edges:
            raise ValueError("replacement design must have one row per edge")
        return DesignOperators(self.grad, annot, self.component_labels)


def connected_components(n_nodes: int, u: Sequence[int], v: Sequence[int]) -> np.ndarray:
    """Label connected components by union-find with path halving.

    Labels are renumbered ``0, 1, ...`` in order of each component's
    smallest node index.
    """
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in zip(np.asarray(u).tolist(), np.asarray(v).tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    roots = [find(x) for x in range(n_nodes)]
    relabel: dict[int, int] = {}
    return np.array([relabel.setdefault(r, len(relabel)) for r in roots], dtype=np.int64)


def build_operators(ds: ComparisonDataset) -> DesignOperators:
    """Build the gradient and annotator operators of a dataset."""
    if ds.n_edges == 0:
        raise DatasetError("cannot build operators for an empty dataset")
    m = ds.n_edges
    rows = np.arange(m)
    grad = sp.csr_matrix(
        (
            np.concatenate([np.ones(m), -np.ones(m)]),
            (np.concatenate([rows, rows]), np.concatenate([ds.left_idx, ds.right_idx])),
        ),
        shape=(m, ds.n_items),
    )
    annot = sp.csr_matrix((np.ones(m), (rows, ds.annot_idx)), shape=(m, ds.n_annotators))
    labels = connected_components(ds.n_items, ds.left_idx, ds.right_idx)
    return DesignOperators(grad, annot, labels)


def left_right_counts(ds: ComparisonDataset) -> dict[str, tuple[int, int]]:
    """Per-annotator number of left and right clicks.

    Raises
    ------
    DatasetError
        If any response is not ``+1`` or ``-1``.
    """
    if not ds.is_dichotomous:
        raise DatasetError("left/right click counts require dichotomous (+1/-1) responses")
    p = ds.n_annotators
    left = np.bincount(ds.annot_idx[ds.response > 0], minlength=p)
    right = np.bincount(ds.annot_idx[ds.response < 0], minlength=p)
    return {key: (int(left[j]), int(right[j])) for j, key in enumerate(ds.annotators)}
