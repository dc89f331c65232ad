"""Tabular CSV loading, train/validation splitting, scaling, and binning."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import LoadError


@dataclass
class Dataset:
    """An n x D feature matrix with integer-coded labels.

    ``y`` holds indices into ``class_values``, which lists the distinct raw
    labels in sorted order (numeric when every label parses as a number).
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_values: list[str]

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return len(self.class_values)


@dataclass
class Split:
    """Disjoint train/validation row indices covering every row once."""

    train_indices: np.ndarray
    valid_indices: np.ndarray
    warnings: list[str] = field(default_factory=list)


def _sort_class_values(values):
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


def load_csv(path, label_column="-1", has_header=True) -> Dataset:
    """Load a comma-separated table; ``label_column`` is a header name or a
    0-based column index (negative indices count from the end)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise LoadError(f"{path}: empty file")

    if has_header:
        header = [h.strip() for h in rows[0]]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise LoadError(f"{path}: duplicate header names {dupes}")
        body = rows[1:]
    else:
        header = [f"f{j}" for j in range(len(rows[0]))]
        body = rows
    if not body:
        raise LoadError(f"{path}: no data rows")

    n_cols = len(header)
    label_column = str(label_column)
    if has_header and label_column in header:
        label_idx = header.index(label_column)
    else:
        try:
            label_idx = int(label_column)
        except ValueError:
            raise LoadError(f"{path}: label column {label_column!r} not found") from None
        if label_idx < 0:
            label_idx += n_cols
        if not 0 <= label_idx < n_cols:
            raise LoadError(f"{path}: label column index {label_column} out of range")

    feature_cols = [j for j in range(n_cols) if j != label_idx]
    x = np.empty((len(body), len(feature_cols)))
    labels = []
    for i, row in enumerate(body):
        if len(row) != n_cols:
            raise LoadError(f"{path}: row {i} has {len(row)} cells, expected {n_cols}")
        for out_j, j in enumerate(feature_cols):
            cell = row[j].strip()
            try:
                x[i, out_j] = float(cell)
            except ValueError:
                raise LoadError(
                    f"{path}: cannot parse cell at row {i}, column {header[j]!r}: {cell!r}"
                ) from None
            if cell == "":
                raise LoadError(f"{path}: blank cell at row {i}, column {header[j]!r}")
        labels.append(row[label_idx].strip())
    if not np.all(np.isfinite(x)):
        i, j = np.argwhere(~np.isfinite(x))[0]
        raise LoadError(f"{path}: non-finite value at row {i}, column {header[feature_cols[j]]!r}")

    class_values = _sort_class_values(set(labels))
    code = {v: k for k, v in enumerate(class_values)}
    y = np.array([code[v] for v in labels], dtype=np.intp)
    names = [header[j] for j in feature_cols]
    return Dataset(X=x, y=y, feature_names=names, class_values=class_values)


def save_csv(path, dataset: Dataset, label_name="label"):
    """Write a Dataset back out with a header; values keep 17 significant
    digits so a reload round-trips."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names + [label_name])
        for i in range(dataset.n_samples):
            cells = [f"{v:.17g}" for v in dataset.X[i]]
            cells.append(dataset.class_values[dataset.y[i]])
            writer.writerow(cells)


def split_dataset(dataset: Dataset, train_fraction, seed) -> Split:
    """Seeded stratified split; classes with fewer than 2 samples go
    entirely to train (with a warning)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    n = dataset.n_samples
    target_train = int(round(train_fraction * n))

    notes = []
    class_rows = []
    forced_train = []
    for c in range(dataset.n_classes):
        rows = np.flatnonzero(dataset.y == c)
        if len(rows) == 0:
            continue
        if len(rows) < 2:
            forced_train.append(rows)
            notes.append(
                f"class {dataset.class_values[c]!r} has {len(rows)} sample(s); assigned to train"
            )
            warnings.warn(notes[-1])
        else:
            class_rows.append(rows)

    budget = target_train - sum(len(r) for r in forced_train)
    # Largest-remainder allocation keeps the overall fraction within one row;
    # every stratified class keeps at least one row on each side.
    quotas = [train_fraction * len(r) for r in class_rows]
    counts = [min(max(int(q), 1), len(r) - 1) for q, r in zip(quotas, class_rows)]
    by_remainder = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - int(quotas[i])), i))
    while sum(counts) != budget:
        if sum(counts) < budget:
            movable = [i for i in by_remainder if counts[i] < len(class_rows[i]) - 1]
            delta = 1
        else:
            movable = [i for i in reversed(by_remainder) if counts[i] > 1]
            delta = -1
        if not movable:
            break
        for i in movable:
            counts[i] += delta
            if sum(counts) == budget:
                break

    train_parts = list(forced_train)
    valid_parts = []
    for rows, c in zip(class_rows, counts):
        perm = rng.permutation(len(rows))
        train_parts.append(rows[perm[:c]])
        valid_parts.append(rows[perm[c:]])
    train = np.sort(np.concatenate(train_parts)) if train_parts else np.empty(0, dtype=np.intp)
    valid = np.sort(np.concatenate(valid_parts)) if valid_parts else np.empty(0, dtype=np.intp)
    return Split(train_indices=train.astype(np.intp), valid_indices=valid.astype(np.intp), warnings=notes)


def scale_to_range(matrix) -> np.ndarray:
    """Per-column affine map onto [-1, 1]; constant columns map to 0."""
    matrix = np.asarray(matrix, dtype=np.float64)
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    span = hi - lo
    safe = np.where(span == 0.0, 1.0, span)
    out = 2.0 * (matrix - lo) / safe - 1.0
    out[:, span == 0.0] = 0.0
    return out


def row_subsample(matrix, cap, seed) -> np.ndarray:
    """Seeded uniform row sample without replacement, original order kept."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    matrix = np.asarray(matrix)
    if matrix.shape[0] <= cap:
        return matrix
    return matrix[row_subsample_indices(matrix.shape[0], cap, seed)]


def row_subsample_indices(n, cap, seed) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False))


def discretize(column, bin_count) -> np.ndarray:
    """Equal-width integer binning over [min, max]; the max lands in the
    last bin and constant columns collapse to bin 0."""
    if bin_count < 2:
        raise ValueError(f"bin_count must be >= 2, got {bin_count}")
    column = np.asarray(column, dtype=np.float64)
    lo, hi = column.min(), column.max()
    if hi == lo:
        return np.zeros(column.shape, dtype=np.intp)
    width = (hi - lo) / bin_count
    bins = np.floor((column - lo) / width).astype(np.intp)
    return np.clip(bins, 0, bin_count - 1)
