"""Dataset representation, ingestion, synthesis, and stratified splitting.

A :class:`Dataset` is an immutable bundle of a feature matrix, dense integer
class labels, and stable per-sample identifiers. Identifiers survive every
transform in the toolkit (subsampling, splitting, glitch injection), which is
what lets downstream evaluation trace a ranked sample back to its ground
truth.

CSV conventions
---------------
* Ingestion (:func:`load_csv`): header row required, one label column named by
  the caller, all other columns numeric with ``.`` decimal separator, UTF-8.
  Features are standardized per column (zero mean, unit variance, population
  std, zero-variance columns divide by one) and labels are re-encoded to dense
  indices in first-appearance order.
* Persistence (:meth:`Dataset.to_csv` / :meth:`Dataset.from_csv`): exact
  round-trip with a reserved ``__sample_id__`` column and a ``label`` column;
  no re-standardization, no re-encoding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .util import format_float, rng_from_seed, round_half_up

SAMPLE_ID_COLUMN = "__sample_id__"

_CENTER_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class Dataset:
    """n samples with d features each, labels in {0..class_count-1}, unique ids."""

    features: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        sample_ids = np.array(self.sample_ids, dtype=np.int64)
        if features.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        if labels.ndim != 1 or sample_ids.ndim != 1:
            raise ValidationError("labels and sample_ids must be 1-D vectors")
        n = features.shape[0]
        if labels.shape[0] != n or sample_ids.shape[0] != n:
            raise ValidationError("features, labels and sample_ids disagree on n")
        if self.class_count < 2:
            raise ValidationError("class_count must be >= 2")
        if n < self.class_count:
            raise ValidationError("need at least one sample per class (n >= class_count)")
        if not np.all(np.isfinite(features)):
            raise ValidationError("features contain non-finite values")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValidationError("labels out of range [0, class_count)")
        if sample_ids.size and sample_ids.min() < 0:
            raise ValidationError("sample_ids must be non-negative")
        if np.unique(sample_ids).size != n:
            raise ValidationError("sample_ids must be unique")
        for arr in (features, labels, sample_ids):
            arr.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sample_ids", sample_ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def to_csv(self, path: str | Path) -> None:
        """Exact persistence: ``__sample_id__``, ``x0..x{d-1}``, ``label``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([SAMPLE_ID_COLUMN] + [f"x{j}" for j in range(self.d)] + ["label"])
            for i in range(self.n):
                row = [str(int(self.sample_ids[i]))]
                row += [format_float(v) for v in self.features[i]]
                row.append(str(int(self.labels[i])))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path: str | Path, class_count: int | None = None) -> "Dataset":
        """Load a dataset persisted by :meth:`to_csv` without transforming it."""
        header, rows = _read_csv_rows(path)
        if SAMPLE_ID_COLUMN not in header or "label" not in header:
            raise ValidationError(
                f"{path}: persisted datasets need {SAMPLE_ID_COLUMN!r} and 'label' columns"
            )
        id_col = header.index(SAMPLE_ID_COLUMN)
        label_col = header.index("label")
        feature_cols = [j for j in range(len(header)) if j not in (id_col, label_col)]
        sample_ids = np.array([_parse_int(r[id_col], path) for r in rows], dtype=np.int64)
        labels = np.array([_parse_int(r[label_col], path) for r in rows], dtype=np.int64)
        features = _parse_feature_block(rows, feature_cols, header, path)
        if class_count is None:
            class_count = int(labels.max()) + 1 if labels.size else 0
        return cls(features, labels, sample_ids, class_count)


@dataclass(frozen=True)
class SplitPair:
    """A stratified train/validation partition of one source dataset."""

    train: Dataset
    validation: Dataset

    def __post_init__(self):
        overlap = np.intersect1d(self.train.sample_ids, self.validation.sample_ids)
        if overlap.size:
            raise ValidationError("train and validation share sample_ids")


def standardize(features: np.ndarray) -> np.ndarray:
    """Per-column zero mean / unit variance; zero-variance columns divide by 1."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (features - mean) / std


def standardize_dataset(data: Dataset) -> Dataset:
    return Dataset(standardize(data.features), data.labels, data.sample_ids, data.class_count)


def load_csv(path: str | Path, label_column: str) -> Dataset:
    """Ingest a user CSV: standardize features, densify labels, assign ids.

    Sample ids follow row order unless the file carries the reserved
    ``__sample_id__`` column, in which case those ids are used verbatim.
    """
    header, rows = _read_csv_rows(path)
    if label_column not in header:
        raise ValidationError(f"{path}: label column {label_column!r} not found")
    label_col = header.index(label_column)
    id_col = header.index(SAMPLE_ID_COLUMN) if SAMPLE_ID_COLUMN in header else None
    feature_cols = [j for j in range(len(header)) if j != label_col and j != id_col]
    if not feature_cols:
        raise ValidationError(f"{path}: no feature columns besides the label")

    features = _parse_feature_block(rows, feature_cols, header, path)
    raw_labels = [r[label_col] for r in rows]
    labels, class_count = _encode_labels(raw_labels)
    if class_count < 2:
        raise ValidationError(f"{path}: only one class present")
    if id_col is None:
        sample_ids = np.arange(len(rows), dtype=np.int64)
    else:
        sample_ids = np.array([_parse_int(r[id_col], path) for r in rows], dtype=np.int64)
    return Dataset(standardize(features), labels, sample_ids, class_count)


def make_blobs(n: int, d: int, k: int, separation: float, seed: int) -> Dataset:
    """Synthesize k isotropic unit-variance Gaussian clusters.

    Cluster centers are drawn by rejection sampling until they are pairwise at
    least ``separation`` apart; class sizes differ by at most one. Features
    are emitted on the cluster scale (unit within-cluster variance), which is
    the comparable-scale convention the rest of the toolkit assumes, so no
    further column standardization is applied.
    """
    if k < 2:
        raise ValidationError("make_blobs requires k >= 2")
    if d < 1:
        raise ValidationError("make_blobs requires d >= 1")
    if n < 2 * k:
        raise ValidationError("make_blobs requires n >= 2k")
    if not separation > 0:
        raise ValidationError("separation must be > 0")

    rng = rng_from_seed(seed)
    radius = separation * max(1.0, k ** (1.0 / d))
    centers = None
    for _ in range(_CENTER_PLACEMENT_ATTEMPTS):
        candidate = rng.uniform(-radius, radius, size=(k, d))
        deltas = candidate[:, None, :] - candidate[None, :, :]
        dist = np.sqrt((deltas**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= separation:
            centers = candidate
            break
    if centers is None:
        raise ValidationError(
            f"could not place {k} centers >= {separation} apart in {d} dims "
            f"after {_CENTER_PLACEMENT_ATTEMPTS} attempts"
        )

    base, remainder = divmod(n, k)
    sizes = [base + (1 if c < remainder else 0) for c in range(k)]
    feature_blocks = []
    label_blocks = []
    for c, size in enumerate(sizes):
        feature_blocks.append(centers[c] + rng.standard_normal((size, d)))
        label_blocks.append(np.full(size, c, dtype=np.int64))
    features = np.vstack(feature_blocks)
    labels = np.concatenate(label_blocks)
    return Dataset(features, labels, np.arange(n, dtype=np.int64), k)


def stratified_subsample(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep round(fraction * class size) samples per class, uniformly at random.

    Selected rows keep their source order and ids, so ``fraction=1.0`` is the
    identity.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must be in (0, 1]")
    rng = rng_from_seed(seed)
    keep_rows = []
    for c in range(data.class_count):
        class_rows = np.flatnonzero(data.labels == c)
        count = round_half_up(fraction * class_rows.size)
        if count < 1:
            raise ValidationError(f"fraction {fraction} empties class {c}")
        count = min(count, class_rows.size)
        keep_rows.append(rng.choice(class_rows, size=count, replace=False))
    rows = np.sort(np.concatenate(keep_rows))
    return _take(data, rows)


def stratified_split(data: Dataset, train_fraction: float, seed: int) -> SplitPair:
    """Partition into stratified train/validation parts with disjoint ids."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must be in (0, 1)")
    rng = rng_from_seed(seed)
    train_rows = []
    val_rows = []
    for c in range(data.class_count):
        class_rows = np.flatnonzero(data.labels == c)
        count = round_half_up(train_fraction * class_rows.size)
        if count < 1 or class_rows.size - count < 1:
            raise ValidationError(
                f"train_fraction {train_fraction} empties class {c} in one part"
            )
        chosen = rng.choice(class_rows, size=count, replace=False)
        train_rows.append(chosen)
        val_rows.append(np.setdiff1d(class_rows, chosen))
    train = _take(data, np.sort(np.concatenate(train_rows)))
    validation = _take(data, np.sort(np.concatenate(val_rows)))
    return SplitPair(train=train, validation=validation)


def _take(data: Dataset, rows: np.ndarray) -> Dataset:
    return Dataset(
        data.features[rows], data.labels[rows], data.sample_ids[rows], data.class_count
    )


def _read_csv_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names")
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(f"{path}: row {i + 2} has {len(row)} cells, expected {width}")
    return header, rows


def _parse_feature_block(
    rows: list[list[str]], feature_cols: list[int], header: list[str], path: str | Path
) -> np.ndarray:
    features = np.empty((len(rows), len(feature_cols)), dtype=np.float64)
    for i, row in enumerate(rows):
        for jj, j in enumerate(feature_cols):
            cell = row[j]
            try:
                value = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{path}: non-numeric cell {cell!r} in column {header[j]!r}, row {i + 2}"
                ) from None
            if math.isnan(value) or math.isinf(value):
                raise ValidationError(
                    f"{path}: non-finite value in column {header[j]!r}, row {i + 2}"
                )
            features[i, jj] = value
    return features


def _parse_int(cell: str, path: str | Path) -> int:
    try:
        return int(cell)
    except ValueError:
        raise ValidationError(f"{path}: expected integer, got {cell!r}") from None


def _encode_labels(raw_labels: list[str]) -> tuple[np.ndarray, int]:
    """Dense re-encoding in first-appearance order."""
    mapping: dict[str, int] = {}
    encoded = np.empty(len(raw_labels), dtype=np.int64)
    for i, raw in enumerate(raw_labels):
        if raw not in mapping:
            mapping[raw] = len(mapping)
        encoded[i] = mapping[raw]
    return encoded, len(mapping)
