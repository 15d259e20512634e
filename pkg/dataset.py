"""
Datasets of numeric feature columns plus labels, CSV loading, splitting
and column projection.

CSV format: header row, one column named `label`, every other column is a
feature column keyed by its header name. Values are 64-bit floats.
"""

import csv
import logging
from types import MappingProxyType
from typing import NamedTuple

import numpy as np

from utils import round_half_up

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
MAX_STRATIFY_CLASSES = 20


class DatasetError(ValueError):
    pass


class Dataset:
    """
    Immutable column store. All columns and the labels share one length.
    """

    def __init__(self, columns, labels):
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim != 1:
            raise DatasetError("labels must be a vector")
        frozen = {}
        for name, values in columns.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != labels.shape:
                raise DatasetError("column {!r} has {} rows, labels have {}".format(
                    name, values.size, labels.size))
            if not np.all(np.isfinite(values)):
                raise DatasetError("column {!r} contains NaN or Inf".format(name))
            values.setflags(write=False)
            frozen[name] = values
        if not np.all(np.isfinite(labels)):
            raise DatasetError("labels contain NaN or Inf")
        labels.setflags(write=False)
        self.columns = MappingProxyType(frozen)
        self.labels = labels

    @property
    def row_count(self):
        return int(self.labels.size)

    @property
    def column_names(self):
        return tuple(self.columns.keys())

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset({k: v[rows] for k, v in self.columns.items()}, self.labels[rows])

    def __len__(self):
        return self.row_count

    def __repr__(self):
        return "Dataset({} rows, {} columns)".format(self.row_count, len(self.columns))


def load_dataset(path):
    """
    Read a CSV dataset. Errors name the file and line.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("{}: empty file".format(path)) from None
        header = [h.strip() for h in header]
        if LABEL_COLUMN not in header:
            raise DatasetError("{}: no {!r} column".format(path, LABEL_COLUMN))
        if len(set(header)) != len(header):
            raise DatasetError("{}: duplicate column names".format(path))

        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DatasetError("{}:{}: expected {} fields, found {}".format(
                    path, line_no, len(header), len(record)))
            try:
                values = [float(v) for v in record]
            except ValueError as e:
                raise DatasetError("{}:{}: {}".format(path, line_no, e)) from None
            if not all(np.isfinite(values)):
                raise DatasetError("{}:{}: NaN or Inf value".format(path, line_no))
            rows.append(values)

    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    label_idx = header.index(LABEL_COLUMN)
    columns = {name: data[:, i].copy() for i, name in enumerate(header) if i != label_idx}
    d = Dataset(columns, data[:, label_idx].copy())
    logger.info("loaded %s from %s", d, path)
    return d


def save_dataset(d, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(d.column_names) + [LABEL_COLUMN])
        matrix = np.column_stack([d.columns[c] for c in d.column_names] + [d.labels])
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def _is_class_labels(labels):
    return (np.all(labels == np.round(labels))
            and np.unique(labels).size <= MAX_STRATIFY_CLASSES)


def split_indices(labels, holdout_fraction, seed, stratify=None):
    """
    Row indices (train, holdout) of a deterministic, optionally stratified
    split. Holdout size is round-half-up of holdout_fraction * n.
    """
    n = labels.size
    if not 0 < holdout_fraction < 1:
        raise DatasetError("holdout_fraction must lie in (0, 1), got {}".format(holdout_fraction))
    if n < 2:
        raise DatasetError("need at least 2 rows to split, got {}".format(n))
    if stratify is None:
        stratify = _is_class_labels(labels)

    rng = np.random.default_rng(seed)
    n_holdout = round_half_up(holdout_fraction * n)
    if not stratify:
        perm = rng.permutation(n)
        return np.sort(perm[n_holdout:]), np.sort(perm[:n_holdout])

    classes = np.unique(labels)
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    # largest-remainder allocation keeps the holdout size exact
    quotas = np.array([holdout_fraction * m.size for m in members])
    counts = np.floor(quotas).astype(np.int64)
    shortfall = n_holdout - counts.sum()
    for i in np.argsort(-(quotas - counts), kind="stable")[:max(shortfall, 0)]:
        counts[i] += 1

    train, holdout = [], []
    for c, m, k in zip(classes, members, counts):
        if k == 0 or k == m.size:
            raise DatasetError(
                "degenerate split: class {!r} would be absent from the {} split".format(
                    c, "holdout" if k == 0 else "training"))
        holdout.append(m[:k])
        train.append(m[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(holdout))


def train_holdout_split(d, holdout_fraction=0.25, seed=0, stratify=None):
    train_rows, holdout_rows = split_indices(d.labels, holdout_fraction, seed, stratify)
    return d.subset(train_rows), d.subset(holdout_rows)


class ValidationSplit(NamedTuple):
    optimize_rows: np.ndarray
    validation_rows: np.ndarray


def validation_split(d, validation_fraction=0.2, seed=0):
    """
    Row ids of d for the optimizers and, disjoint from them, for the bench.
    The optimizers split optimize_rows into train and holdout themselves, so
    validation rows stay unseen by training and calibration alike.
    """
    optimize_rows, validation_rows = split_indices(d.labels, validation_fraction, seed)
    return ValidationSplit(optimize_rows, validation_rows)


def project(d, cols):
    """
    Feature matrix with row_count rows and the requested columns, in order.
    """
    missing = [c for c in cols if c not in d.columns]
    if missing:
        raise DatasetError("unknown column(s) {}".format(missing))
    if not cols:
        return np.empty((d.row_count, 0), dtype=np.float64)
    return np.column_stack([d.columns[c] for c in cols])
