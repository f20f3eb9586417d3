"""Tabular dataset ingestion, standardization, splitting and synthesis."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateSplit,
    DuplicateHeader,
    EmptyFile,
    InvalidConfig,
    KTooLarge,
    MissingColumn,
    MissingFile,
    NonNumericCell,
)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    # ground-truth informative columns, only set by synth_highdim
    informative: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidConfig(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvalidConfig("labels must have one entry per row")
        if len(self.class_names) < 2:
            raise InvalidConfig("at least two classes are required")
        if len(self.feature_names) != X.shape[1]:
            raise InvalidConfig("feature_names length must equal the number of columns")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DuplicateHeader("feature names must be unique")
        if not np.all(np.isfinite(X)):
            raise InvalidConfig("features contain NaN or Inf")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise InvalidConfig("label out of range")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def take_rows(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.feature_names,
                       self.class_names, self.informative)

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(X, self.labels, self.feature_names, self.class_names, self.informative)


@dataclass(frozen=True)
class ScalerParams:
    means: np.ndarray
    std_devs: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.means) / self._safe_std()

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self._safe_std() + self.means

    def _safe_std(self) -> np.ndarray:
        return np.where(self.std_devs > 0, self.std_devs, 1.0)

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "std_devs": self.std_devs.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ScalerParams":
        return cls(np.asarray(d["means"], dtype=np.float64),
                   np.asarray(d["std_devs"], dtype=np.float64))


@dataclass(frozen=True)
class ReducedDataset:
    base: Dataset
    selected_indices: tuple[int, ...]
    # selected columns in ranking order (best first), as original indices
    rank_order: tuple[int, ...]


def load_csv(path: str | Path, label_column: str, delimiter: str = ",") -> Dataset:
    """Read a headed, delimited numeric table.

    Labels are factor-encoded in order of first appearance. Row numbers in
    ``NonNumericCell`` are 1-based data rows (the header is not counted).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} does not exist")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path} has no header row")
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise DuplicateHeader(f"duplicate column names: {dupes}")
        if label_column not in header:
            raise MissingColumn(f"label column {label_column!r} not in header")
        label_pos = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != label_pos]

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise MissingColumn(f"row {r} has {len(record)} cells, expected {len(header)}")
            values = []
            for i, cell in enumerate(record):
                if i == label_pos:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(r, header[i], cell) from None
                if not np.isfinite(v):
                    raise NonNumericCell(r, header[i], cell)
                values.append(v)
            rows.append(values)
            raw_labels.append(record[label_pos].strip())

    if not rows:
        raise EmptyFile(f"{path} has no data rows")
    classes: dict[str, int] = {}
    for lab in raw_labels:
        classes.setdefault(lab, len(classes))
    if len(classes) < 2:
        raise DegenerateSplit(f"label column {label_column!r} has a single class")
    y = np.array([classes[lab] for lab in raw_labels], dtype=np.int64)
    return Dataset(np.array(rows, dtype=np.float64), y, tuple(names), tuple(classes))


def write_csv(d: Dataset, path: str | Path, label_column: str = "label", delimiter: str = ",") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow([*d.feature_names, label_column])
        for row, lab in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in row] + [d.class_names[lab]])


def standardize(d: Dataset) -> tuple[Dataset, ScalerParams]:
    """Zero-mean, unit-variance columns (population std); constant columns become 0."""
    if d.n_rows < 2:
        raise InvalidConfig("standardize needs at least two rows")
    X = d.features
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    const = np.all(X == X[0], axis=0)
    stds = np.where(const, 0.0, stds)
    params = ScalerParams(means, stds)
    Z = params.transform(X)
    Z[:, const] = 0.0
    return d.with_features(Z), params


def split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split.

    The total test size is ``round(N * test_fraction)``; it is shared out across
    classes by largest remainder so every class keeps at least one training row.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InvalidConfig("test_fraction must lie in (0, 1)")
    n = d.n_rows
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise DegenerateSplit(f"split of {n} rows at fraction {test_fraction} leaves an empty partition")

    rng = np.random.default_rng(seed)
    counts = np.bincount(d.labels, minlength=d.n_classes)
    present = np.flatnonzero(counts)
    cap = np.maximum(counts - 1, 0)  # keep one row of each class for training
    if n_test > cap.sum():
        raise DegenerateSplit("test partition would leave a class absent from training")
    quota = counts * test_fraction
    alloc = np.minimum(np.floor(quota).astype(np.int64), cap)
    remaining = n_test - alloc.sum()
    if remaining > 0:
        frac = quota - np.floor(quota)
        order = sorted(present, key=lambda c: (-frac[c], c))
        while remaining > 0:
            progressed = False
            for c in order:
                if remaining == 0:
                    break
                if alloc[c] < cap[c]:
                    alloc[c] += 1
                    remaining -= 1
                    progressed = True
            if not progressed:
                raise DegenerateSplit("cannot place test rows without emptying a class")
    elif remaining < 0:  # pragma: no cover - floor never exceeds the total
        raise DegenerateSplit("allocation overflow")

    test_idx = []
    for c in present:
        rows = np.flatnonzero(d.labels == c)
        test_idx.append(rng.permutation(rows)[: alloc[c]])
    test_mask = np.zeros(n, dtype=bool)
    test_mask[np.concatenate(test_idx)] = True
    return d.take_rows(np.flatnonzero(~test_mask)), d.take_rows(np.flatnonzero(test_mask))


def synth_highdim(n: int, m_total: int, m_informative: int, classes: int,
                  noise_sigma: float = 1.0, seed: int = 0, separation: float = 1.0) -> Dataset:
    """Class-conditional Gaussians on ``m_informative`` random columns, N(0, 1) elsewhere.

    Informative column j of class c is drawn from N(mu[c, j], noise_sigma**2)
    with mu ~ N(0, separation**2). The informative column set is recorded on
    the returned dataset.
    """
    if n < 1 or m_total < 1 or m_informative < 0 or m_informative > m_total:
        raise InvalidConfig("need 0 <= m_informative <= m_total and n >= 1")
    if classes < 2:
        raise InvalidConfig("classes must be >= 2")
    if noise_sigma < 0:
        raise InvalidConfig("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, size=n)
    informative = np.sort(rng.choice(m_total, size=m_informative, replace=False))
    means = rng.normal(0.0, separation, size=(classes, m_informative))
    X = rng.normal(0.0, 1.0, size=(n, m_total))
    X[:, informative] = means[y] + noise_sigma * rng.normal(size=(n, m_informative))
    names = tuple(f"f{j}" for j in range(m_total))
    return Dataset(X, y, names, tuple(f"c{c}" for c in range(classes)),
                   informative=tuple(int(i) for i in informative))


def reduce_to_topk(d: Dataset, ranking, k: int) -> ReducedDataset:
    """Keep the ``k`` best-ranked columns; ``ranking.order`` lists columns best first."""
    order = np.asarray(ranking.order, dtype=np.int64)
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    if k > d.n_features:
        raise KTooLarge(f"k={k} exceeds {d.n_features} features")
    if sorted(order.tolist()) != list(range(d.n_features)):
        raise InvalidConfig("ranking must be a permutation of all feature indices")
    top = order[:k]
    selected = np.sort(top)
    base = Dataset(d.features[:, selected], d.labels,
                   tuple(d.feature_names[i] for i in selected), d.class_names)
    return ReducedDataset(base, tuple(int(i) for i in selected), tuple(int(i) for i in top))


def class_counts(labels: Sequence[int], n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
