"""UCR-format dataset loading and stratified fold planning."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    EmptyFile,
    NonNumericField,
    RaggedRows,
    SingleClass,
    TooFewInstances,
    DataError,
)


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    label: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise DataError("a time series needs at least 2 values")
        if not np.all(np.isfinite(values)):
            raise DataError("time series values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Dataset:
    """Equal-length labelled univariate series.

    ``X`` is an ``(N, L)`` float64 matrix and ``y`` holds labels remapped to
    ``0..C-1``. ``label_values`` maps each remapped label back to the value
    found in the source file.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    label_values: tuple = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataError("dataset must be a non-empty 2-D matrix")
        if X.shape[1] < 2:
            raise DataError("series length must be at least 2")
        if y.shape != (X.shape[0],):
            raise DataError("label vector does not match the number of series")
        if not np.all(np.isfinite(X)):
            raise DataError("series values must be finite")
        if y.min() < 0:
            raise DataError("labels must be non-negative integers")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if not self.label_values:
            object.__setattr__(self, "label_values", tuple(range(int(y.max()) + 1)))

    @property
    def n_instances(self) -> int:
        return self.X.shape[0]

    @property
    def series_length(self) -> int:
        return self.X.shape[1]

    @property
    def class_labels(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.y))

    @property
    def n_classes(self) -> int:
        return len(self.label_values)

    @property
    def series(self) -> list[TimeSeries]:
        return [TimeSeries(x, int(label)) for x, label in zip(self.X, self.y)]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.name, self.X[idx], self.y[idx], self.label_values)

    def znormalized(self) -> "Dataset":
        mu = self.X.mean(axis=1, keepdims=True)
        sd = self.X.std(axis=1, keepdims=True)
        sd[sd == 0] = 1.0
        return Dataset(self.name, (self.X - mu) / sd, self.y, self.label_values)


def _split_fields(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        return line.split()
    return [f.strip() for f in line.split(delimiter)]


def _read_rows(path) -> tuple[list[list[float]], str]:
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    delimiter = "," if path.lower().endswith(".csv") else "\t"
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = _split_fields(line, delimiter)
            # some mirrors of the archive pad with spaces instead of tabs
            if delimiter == "\t" and len(fields) == 1:
                fields = line.split()
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                bad = next(f for f in fields if not _is_float(f))
                raise NonNumericField(f"{path}:{lineno}: non-numeric field {bad!r}") from None
    if not rows:
        raise EmptyFile(f"{path} contains no data rows")
    name = os.path.basename(path)
    for suffix in (".tsv", ".csv", ".txt"):
        if name.lower().endswith(suffix):
            name = name[: -len(suffix)]
    return rows, name


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _label_key(value: float):
    return int(value) if float(value).is_integer() else float(value)


def load_ucr_tsv(path, label_values: Sequence | None = None) -> Dataset:
    """Load a UCR archive file (label first, then values; tab separated).

    Files ending in ``.csv`` are read comma separated. Labels are remapped to
    ``0..C-1`` in ascending order of their original values. Pass the
    ``label_values`` of a training set to map a test file onto the same codes;
    in that mode a single-class file is allowed.
    """
    rows, name = _read_rows(path)
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(
                f"row {i + 1} has {len(row) - 1} values, expected {width - 1}"
            )
    if width < 3:
        raise DataError("each row needs a label and at least 2 values")
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonNumericField("NaN or infinite values are not supported")
    raw_labels = [_label_key(v) for v in data[:, 0]]
    if label_values is None:
        label_values = tuple(sorted(set(raw_labels)))
        if len(label_values) < 2:
            raise SingleClass(f"{path} contains a single class")
    else:
        label_values = tuple(_label_key(v) for v in label_values)
    lookup = {v: i for i, v in enumerate(label_values)}
    try:
        y = np.array([lookup[v] for v in raw_labels], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} not present in the training labels") from None
    return Dataset(name, data[:, 1:], y, label_values)


def load_unlabeled(path) -> np.ndarray:
    """Read a file whose rows hold series values only."""
    rows, _ = _read_rows(path)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise RaggedRows("rows have unequal lengths")
    X = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NonNumericField("NaN or infinite values are not supported")
    return X


def format_number(value: float) -> str:
    return f"{value:.12g}"


def write_ucr_tsv(d: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, label in zip(d.X, d.y):
            original = d.label_values[int(label)]
            fh.write("\t".join([str(original)] + [format_number(v) for v in x]) + "\n")


@dataclass(frozen=True)
class FoldPlan:
    folds: list
    seed: int
    shortfall: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.folds)


def stratified_kfold(d: Dataset, k: int, seed: int) -> FoldPlan:
    """Deterministic stratified k-fold plan.

    Each class is shuffled with its own PCG64 stream spawned from ``seed`` and
    dealt round-robin over the folds. The dealing position carries over from
    one class to the next so that fold sizes differ by at most one.
    """
    if k < 2:
        raise DataError("k must be at least 2")
    n = d.n_instances
    if n < k:
        raise TooFewInstances(f"{n} instances cannot fill {k} folds")
    classes = d.class_labels
    streams = np.random.SeedSequence(seed).spawn(len(classes))
    buckets: list[list[int]] = [[] for _ in range(k)]
    shortfall = {}
    position = 0
    for cls, stream in zip(classes, streams):
        members = np.flatnonzero(d.y == cls)
        np.random.Generator(np.random.PCG64(stream)).shuffle(members)
        if len(members) < k:
            shortfall[cls] = k - len(members)
        for idx in members:
            buckets[position % k].append(int(idx))
            position += 1
    everything = np.arange(n)
    folds = []
    for bucket in buckets:
        val = np.array(sorted(bucket), dtype=np.int64)
        train = np.setdiff1d(everything, val)
        folds.append((train, val))
    return FoldPlan(folds=folds, seed=seed, shortfall=shortfall)


def fold_class_counts(d: Dataset, plan: FoldPlan) -> list[dict]:
    return [
        {int(c): int(np.sum(d.y[val] == c)) for c in d.class_labels}
        for _, val in plan.folds
    ]


__all__ = [
    "TimeSeries",
    "Dataset",
    "FoldPlan",
    "load_ucr_tsv",
    "load_unlabeled",
    "write_ucr_tsv",
    "stratified_kfold",
    "fold_class_counts",
]
