"""Datasets, CSV ingestion and column standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InputError(ValueError):
    """Raised for malformed or inconsistent user input."""


class ParseError(InputError):
    """A CSV cell could not be parsed as a finite number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with response and optional group labels.

    ``response`` holds floats for regression and integer codes ``0..C-1``
    for classification; ``classes`` maps codes back to the original labels
    (empty for regression). ``group_ids`` are integer codes with their
    original labels in ``group_labels``.
    """

    features: np.ndarray
    response: np.ndarray | None
    feature_names: tuple[str, ...]
    classes: tuple[str, ...] = ()
    group_ids: np.ndarray | None = None
    group_labels: tuple[str, ...] = ()
    response_name: str | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise InputError("features must be a 2-D matrix")
        if not np.all(np.isfinite(X)):
            raise InputError("features contain non-finite values")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        n = X.shape[0]
        if len(self.feature_names) != X.shape[1]:
            raise InputError("feature_names length does not match column count")
        if self.response is not None:
            y = np.asarray(self.response, dtype=int if self.classes else float)
            if y.shape != (n,):
                raise InputError("response length does not match row count")
            if self.classes:
                if len(self.classes) < 2:
                    raise InputError("classification needs at least 2 classes")
                if y.min() < 0 or y.max() >= len(self.classes):
                    raise InputError("class codes outside 0..C-1")
            elif not np.all(np.isfinite(y)):
                raise InputError("response contains non-finite values")
            y.setflags(write=False)
            object.__setattr__(self, "response", y)
        if self.group_ids is not None:
            g = np.asarray(self.group_ids, dtype=int)
            if g.shape != (n,):
                raise InputError("group_ids length does not match row count")
            g.setflags(write=False)
            object.__setattr__(self, "group_ids", g)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    @property
    def is_classification(self):
        return bool(self.classes)

    @property
    def n_classes(self):
        return len(self.classes)

    def decode(self, codes):
        """Map integer class codes back to the original label strings."""
        return [self.classes[int(c)] for c in codes]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            features=self.features[rows],
            response=None if self.response is None else self.response[rows],
            feature_names=self.feature_names,
            classes=self.classes,
            group_ids=None if self.group_ids is None else self.group_ids[rows],
            group_labels=self.group_labels,
            response_name=self.response_name,
        )


def encode_labels(values):
    """Encode labels by order of first appearance.

    Returns ``(codes, labels)`` with ``labels[codes[i]] == values[i]``.
    """
    index = {}
    codes = np.empty(len(values), dtype=int)
    for i, v in enumerate(values):
        codes[i] = index.setdefault(v, len(index))
    return codes, tuple(index)


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"non-numeric value {text!r} at row {row}, column {column!r}",
            row=row, column=column,
        ) from None
    if not math.isfinite(value):
        raise ParseError(
            f"non-finite value {text!r} at row {row}, column {column!r}",
            row=row, column=column,
        )
    return value


def load_dataset(path, response_column=None, group_column=None,
                 classification=None, classes=None, require_response=True):
    """Read a CSV file with one header row into a :class:`Dataset`.

    Every column other than the response and group columns is a feature.
    A response that parses entirely as numbers is treated as a regression
    target unless ``classification`` is True; otherwise labels are encoded
    by first appearance. Passing ``classes`` fixes the label encoding (used
    when reading test files against a training encoding).

    If ``require_response`` is False, a missing response column yields a
    dataset with ``response=None``.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            rows = [r for r in reader if r]
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None

    for name, col in (("response", response_column), ("group", group_column)):
        if col is not None and col not in header:
            if name == "response" and not require_response:
                continue
            raise InputError(f"{path}: missing {name} column {col!r}")
    if len(rows) < 2:
        raise InputError(f"{path}: need at least 2 data rows, found {len(rows)}")

    has_response = response_column is not None and response_column in header
    resp_idx = header.index(response_column) if has_response else None
    group_idx = header.index(group_column) if group_column is not None else None
    feat_idx = [j for j in range(len(header)) if j not in (resp_idx, group_idx)]

    X = np.empty((len(rows), len(feat_idx)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ParseError(
                f"{path}: row {i + 1} has {len(r)} fields, expected {len(header)}",
                row=i + 1,
            )
        for k, j in enumerate(feat_idx):
            X[i, k] = _parse_float(r[j].strip(), i + 1, header[j])

    labels = ()
    y = None
    if has_response:
        raw = [r[resp_idx].strip() for r in rows]
        if classes is not None:
            lookup = {c: k for k, c in enumerate(classes)}
            unknown = sorted(set(raw) - set(lookup))
            if unknown:
                raise InputError(f"{path}: unknown class labels {unknown}")
            y = np.array([lookup[v] for v in raw], dtype=int)
            labels = tuple(classes)
        elif classification:
            y, labels = encode_labels(raw)
        else:
            try:
                y = np.array([float(v) for v in raw])
            except ValueError:
                if classification is False:
                    raise InputError(f"{path}: response column "
                                     f"{response_column!r} is not numeric") from None
                y, labels = encode_labels(raw)
            else:
                if not np.all(np.isfinite(y)):
                    raise InputError(f"{path}: non-finite value in response "
                                     f"column {response_column!r}")

    group_ids = None
    group_labels = ()
    if group_idx is not None:
        group_ids, group_labels = encode_labels([r[group_idx].strip() for r in rows])

    return Dataset(
        features=X,
        response=y,
        feature_names=tuple(header[j] for j in feat_idx),
        classes=labels,
        group_ids=group_ids,
        group_labels=group_labels,
        response_name=response_column if has_response else None,
    )


@dataclass(frozen=True)
class Standardizer:
    """Column means and population standard deviations.

    Columns with zero spread keep scale 0; they are centered but not
    rescaled, so they map to all zeros.
    """

    means: np.ndarray
    scales: np.ndarray = field()

    def apply(self, features):
        X = np.asarray(features, dtype=float)
        safe = np.where(self.scales > 0, self.scales, 1.0)
        return (X - self.means) / safe

    def invert(self, standardized):
        Z = np.asarray(standardized, dtype=float)
        safe = np.where(self.scales > 0, self.scales, 1.0)
        return Z * safe + self.means

    def to_dict(self):
        return {"means": self.means.tolist(), "scales": self.scales.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["means"], dtype=float),
                   np.asarray(d["scales"], dtype=float))


def fit_standardizer(features):
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError("need a 2-D matrix with at least one row")
    if not np.all(np.isfinite(X)):
        raise InputError("features contain non-finite values")
    means = X.mean(axis=0)
    scales = np.sqrt(((X - means) ** 2).mean(axis=0))
    # round-off on constant columns leaves tiny positive spreads
    tiny = scales <= 1e-12 * np.maximum(np.abs(means), 1.0)
    scales[tiny] = 0.0
    return Standardizer(means, scales)


def apply_standardizer(standardizer, features):
    return standardizer.apply(features)


def write_predictions_csv(path, predictions, cluster_ids, rejected, extra=None):
    """Write ``row_index,prediction,cluster_id,rejected`` rows.

    Rejected rows get an empty prediction field. ``extra`` is an optional
    mapping of column name to per-row values appended after the fixed
    columns.
    """
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "prediction", "cluster_id", "rejected", *extra])
        for i, (pred, cid, rej) in enumerate(zip(predictions, cluster_ids, rejected)):
            cells = ["" if rej else _fmt(pred), int(cid), "true" if rej else "false"]
            cells.extend(_fmt(v[i]) for v in extra.values())
            w.writerow([i, *cells])


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)
