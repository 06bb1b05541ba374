"""Contamination mechanisms: label noise, clustered anomalies, and outliers.

Each injector is a pure function ``(Dataset, params, seed) -> (Dataset,
ErrorTable)``. The returned dataset is a fresh object (inputs are never
mutated) and the error table carries exactly one entry per sample of the
*result* training set, flagging which samples were planted and how. Samples
that are not flagged are bit-identical to their inputs.

Glitch types
------------
``uniform_noise``
    Each label independently flips with probability epsilon; conditional on
    flipping, the replacement is uniform over the other classes.
``class_dependent_noise``
    Only samples of one source class may flip, always to one target class,
    each with probability epsilon.
``near_ca``
    One victim class is downsampled until it makes up ``target_ratio`` of the
    resulting set; the retained minority samples are the anomalies.
``far_ca``
    Samples from a foreign dataset's class are appended under one shared
    label drawn from the host's classes.
``outlier``
    A uniformly chosen subset gets its features corrupted: ``brightness``
    adds the magnitude to every coordinate, ``stripe`` overwrites one shared
    contiguous block of round(d/4) coordinates with the magnitude.

Magnitudes and feature offsets are expressed in standardized-feature units
(features are standardized upstream).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, _take
from .errors import ValidationError
from .util import rng_from_seed, round_half_up

GLITCH_UNIFORM = "uniform_noise"
GLITCH_CLASS_DEPENDENT = "class_dependent_noise"
GLITCH_NEAR_CA = "near_ca"
GLITCH_FAR_CA = "far_ca"
GLITCH_OUTLIER = "outlier"
CLEAN = "clean"

GLITCH_TYPES = (
    GLITCH_UNIFORM,
    GLITCH_CLASS_DEPENDENT,
    GLITCH_NEAR_CA,
    GLITCH_FAR_CA,
    GLITCH_OUTLIER,
)
LABEL_FLIP_TYPES = (GLITCH_UNIFORM, GLITCH_CLASS_DEPENDENT)
CORRUPTIONS = ("brightness", "stripe")

_NO_ORIGINAL = -1


@dataclass(frozen=True)
class ErrorTable:
    """Ground-truth glitch annotations, one entry per training sample id.

    ``original_labels`` holds the pre-flip label for label-flip glitches and
    -1 everywhere else (serialized as an empty cell).
    """

    sample_ids: np.ndarray
    glitch_types: np.ndarray
    original_labels: np.ndarray

    def __post_init__(self):
        sample_ids = np.array(self.sample_ids, dtype=np.int64)
        glitch_types = np.array(self.glitch_types, dtype=np.str_)
        original_labels = np.array(self.original_labels, dtype=np.int64)
        if not (sample_ids.shape == glitch_types.shape == original_labels.shape):
            raise ValidationError("error table columns disagree on length")
        if np.unique(sample_ids).size != sample_ids.size:
            raise ValidationError("error table sample_ids must be unique")
        known = set(GLITCH_TYPES) | {CLEAN}
        if not set(glitch_types.tolist()) <= known:
            raise ValidationError("unknown glitch_type in error table")
        flips = np.isin(glitch_types, LABEL_FLIP_TYPES)
        if np.any(original_labels[~flips] != _NO_ORIGINAL):
            raise ValidationError("original_label only applies to label-flip glitches")
        if np.any(original_labels[flips] < 0):
            raise ValidationError("label-flip entries must record the original label")
        for arr in (sample_ids, glitch_types, original_labels):
            arr.flags.writeable = False
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "glitch_types", glitch_types)
        object.__setattr__(self, "original_labels", original_labels)

    @property
    def is_glitched(self) -> np.ndarray:
        return self.glitch_types != CLEAN

    def glitched_ids(self) -> np.ndarray:
        return self.sample_ids[self.is_glitched]

    @property
    def glitch_count(self) -> int:
        return int(self.is_glitched.sum())

    def dominant_type(self) -> str:
        """Most frequent non-clean type ('clean' for an all-clean table)."""
        kinds = self.glitch_types[self.is_glitched]
        if kinds.size == 0:
            return CLEAN
        values, counts = np.unique(kinds, return_counts=True)
        return str(values[np.argmax(counts)])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "is_glitched", "glitch_type", "original_label"])
            for i in range(self.sample_ids.size):
                original = self.original_labels[i]
                writer.writerow(
                    [
                        str(int(self.sample_ids[i])),
                        "1" if self.glitch_types[i] != CLEAN else "0",
                        str(self.glitch_types[i]),
                        "" if original == _NO_ORIGINAL else str(int(original)),
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "ErrorTable":
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["sample_id", "is_glitched", "glitch_type", "original_label"]:
                raise ValidationError(f"{path}: unexpected error-table header {header}")
            ids, kinds, originals = [], [], []
            for row in reader:
                if not row:
                    continue
                ids.append(int(row[0]))
                kinds.append(row[2])
                originals.append(_NO_ORIGINAL if row[3] == "" else int(row[3]))
                flagged = row[1] == "1"
                if flagged != (row[2] != CLEAN):
                    raise ValidationError(f"{path}: is_glitched disagrees with glitch_type")
        return cls(
            np.array(ids, dtype=np.int64),
            np.array(kinds, dtype=np.str_),
            np.array(originals, dtype=np.int64),
        )


def verify_error_table(table: ErrorTable, data: Dataset) -> None:
    """Check table/dataset coherence: same id set, flips differ from observed."""
    if set(table.sample_ids.tolist()) != set(data.sample_ids.tolist()):
        raise ValidationError("error table ids do not match dataset ids")
    label_by_id = dict(zip(data.sample_ids.tolist(), data.labels.tolist()))
    for sid, kind, original in zip(
        table.sample_ids.tolist(), table.glitch_types.tolist(), table.original_labels.tolist()
    ):
        if kind in LABEL_FLIP_TYPES and original == label_by_id[sid]:
            raise ValidationError(f"sample {sid}: flipped label equals original")


@dataclass(frozen=True)
class GlitchSpec:
    """Declarative description of one injection, as used by configs and the CLI.

    ``epsilon`` doubles as the flip probability (label noise) and the target
    glitch ratio (anomalies/outliers). The ``foreign_*`` fields only apply to
    ``far_ca`` and tell the orchestrator where to get the foreign cluster:
    either a persisted dataset CSV or synthesized blobs, optionally scaled and
    offset in feature space.
    """

    glitch_type: str
    epsilon: float
    seed: int
    source_class: int | None = None
    target_class: int | None = None
    corruption: str | None = None
    corruption_magnitude: float = 0.0
    foreign_csv: str | None = None
    foreign_blobs: dict | None = field(default=None)
    foreign_class: int = 0
    foreign_scale: float = 1.0
    foreign_offset: float = 0.0

    def __post_init__(self):
        if self.glitch_type not in GLITCH_TYPES:
            raise ValidationError(f"unknown glitch_type {self.glitch_type!r}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValidationError("epsilon must be in [0, 1)")
        if self.source_class is not None and self.source_class == self.target_class:
            raise ValidationError("source_class and target_class must differ")
        if self.glitch_type == GLITCH_OUTLIER:
            if self.corruption not in CORRUPTIONS:
                raise ValidationError(f"outlier injection needs corruption in {CORRUPTIONS}")
            if not self.corruption_magnitude > 0:
                raise ValidationError("corruption_magnitude must be > 0")


def inject_uniform_noise(train: Dataset, epsilon: float, seed: int) -> tuple[Dataset, ErrorTable]:
    """Flip each label w.p. epsilon, uniformly to one of the other classes."""
    _check_epsilon(epsilon)
    k = train.class_count
    rng = rng_from_seed(seed)
    flip_rows = np.flatnonzero(rng.random(train.n) < epsilon)
    labels = train.labels.copy()
    draws = rng.integers(0, k - 1, size=flip_rows.size)
    labels[flip_rows] = draws + (draws >= train.labels[flip_rows])
    glitched = Dataset(train.features, labels, train.sample_ids, k)
    return glitched, _table(train, flip_rows, GLITCH_UNIFORM, record_original=True)


def inject_class_dependent_noise(
    train: Dataset,
    epsilon: float,
    source_class: int | None,
    target_class: int | None,
    seed: int,
) -> tuple[Dataset, ErrorTable]:
    """Flip labels of one source class to one target class, each w.p. epsilon.

    With ``None`` for source and/or target the classes are drawn uniformly at
    random (source first, then a distinct target).
    """
    _check_epsilon(epsilon)
    k = train.class_count
    rng = rng_from_seed(seed)
    if source_class is None:
        source_class = int(rng.integers(k))
    if target_class is None:
        draw = int(rng.integers(k - 1))
        target_class = draw + (1 if draw >= source_class else 0)
    if not (0 <= source_class < k and 0 <= target_class < k):
        raise ValidationError("source/target class out of range")
    if source_class == target_class:
        raise ValidationError("source_class and target_class must differ")
    source_rows = np.flatnonzero(train.labels == source_class)
    if source_rows.size == 0:
        raise ValidationError(f"source class {source_class} is empty")
    flip_rows = source_rows[rng.random(source_rows.size) < epsilon]
    labels = train.labels.copy()
    labels[flip_rows] = target_class
    glitched = Dataset(train.features, labels, train.sample_ids, k)
    return glitched, _table(train, flip_rows, GLITCH_CLASS_DEPENDENT, record_original=True)


def inject_near_ca(
    train: Dataset, target_ratio: float, victim_class: int | None, seed: int
) -> tuple[Dataset, ErrorTable]:
    """Downsample one class until it forms ``target_ratio`` of the result.

    Solving retained/(rest + retained) = target_ratio gives the retained
    count; the survivors are the flagged near-clustered anomalies. Labels and
    features are untouched.
    """
    if not 0.0 < target_ratio < 1.0:
        raise ValidationError("target_ratio must be in (0, 1)")
    if target_ratio * train.n < 1.0:
        raise ValidationError("target_ratio leaves less than one sample")
    rng = rng_from_seed(seed)
    if victim_class is None:
        victim_class = int(rng.integers(train.class_count))
    if not 0 <= victim_class < train.class_count:
        raise ValidationError("victim_class out of range")
    victim_rows = np.flatnonzero(train.labels == victim_class)
    n_rest = train.n - victim_rows.size
    retained = round_half_up(target_ratio * n_rest / (1.0 - target_ratio))
    if retained < 1:
        raise ValidationError("target_ratio empties the victim class")
    if retained >= victim_rows.size:
        raise ValidationError(
            f"victim class {victim_class} is already at or below ratio {target_ratio}"
        )
    keep = rng.choice(victim_rows, size=retained, replace=False)
    rows = np.sort(np.concatenate([np.flatnonzero(train.labels != victim_class), keep]))
    result = _take(train, rows)
    flagged_rows = np.flatnonzero(result.labels == victim_class)
    return result, _table(result, flagged_rows, GLITCH_NEAR_CA)


def inject_far_ca(
    train: Dataset,
    foreign: Dataset,
    foreign_class: int,
    ratio: float,
    seed: int,
    id_floor: int = 0,
) -> tuple[Dataset, ErrorTable]:
    """Append a foreign-class cluster under one shared random host label.

    The foreign dataset must already have the host's feature dimensionality
    (alignment is the caller's job). Appended samples get fresh sample ids
    above both the training ids and ``id_floor`` (pass the source dataset's
    max id + 1 so fresh ids cannot collide with a held-out validation part).
    """
    if foreign.d != train.d:
        raise ValidationError(
            f"dimension mismatch: train d={train.d}, foreign d={foreign.d}"
        )
    if not 0.0 < ratio < 1.0:
        raise ValidationError("ratio must be in (0, 1)")
    if ratio * train.n < 1.0:
        raise ValidationError("ratio adds less than one sample")
    added = round_half_up(ratio * train.n / (1.0 - ratio))
    foreign_rows = np.flatnonzero(foreign.labels == foreign_class)
    if foreign_rows.size == 0:
        raise ValidationError(f"foreign class {foreign_class} is empty")
    if added > foreign_rows.size:
        raise ValidationError(
            f"need {added} foreign samples, class {foreign_class} has {foreign_rows.size}"
        )
    rng = rng_from_seed(seed)
    chosen = rng.choice(foreign_rows, size=added, replace=False)
    assigned_label = int(rng.integers(train.class_count))
    start = max(int(train.sample_ids.max()) + 1, int(id_floor))
    fresh_ids = start + np.arange(added, dtype=np.int64)
    result = Dataset(
        np.vstack([train.features, foreign.features[chosen]]),
        np.concatenate([train.labels, np.full(added, assigned_label, dtype=np.int64)]),
        np.concatenate([train.sample_ids, fresh_ids]),
        train.class_count,
    )
    flagged_rows = train.n + np.arange(added)
    return result, _table(result, flagged_rows, GLITCH_FAR_CA)


def inject_outliers(
    train: Dataset, ratio: float, corruption: str, magnitude: float, seed: int
) -> tuple[Dataset, ErrorTable]:
    """Corrupt a uniform subset of samples' features; labels stay put.

    The RNG draws the corrupted rows first, then (for stripe) the shared
    block start.
    """
    if corruption not in CORRUPTIONS:
        raise ValidationError(f"corruption must be one of {CORRUPTIONS}")
    if not magnitude > 0:
        raise ValidationError("magnitude must be > 0")
    if not 0.0 < ratio < 1.0:
        raise ValidationError("ratio must be in (0, 1)")
    if ratio * train.n < 1.0:
        raise ValidationError("ratio corrupts less than one sample")
    if corruption == "stripe" and train.d < 4:
        raise ValidationError("stripe corruption needs d >= 4")
    count = round_half_up(ratio * train.n)
    rng = rng_from_seed(seed)
    rows = rng.choice(train.n, size=count, replace=False)
    features = train.features.copy()
    if corruption == "brightness":
        features[rows] += magnitude
    else:
        width = round_half_up(train.d / 4)
        start = int(rng.integers(0, train.d - width + 1))
        features[rows[:, None], np.arange(start, start + width)] = magnitude
    result = Dataset(features, train.labels, train.sample_ids, train.class_count)
    return result, _table(result, rows, GLITCH_OUTLIER)


def apply_glitch(
    train: Dataset, spec: GlitchSpec, foreign: Dataset | None = None, id_floor: int = 0
) -> tuple[Dataset, ErrorTable]:
    """Dispatch one GlitchSpec against a training set."""
    if spec.glitch_type == GLITCH_UNIFORM:
        return inject_uniform_noise(train, spec.epsilon, spec.seed)
    if spec.glitch_type == GLITCH_CLASS_DEPENDENT:
        return inject_class_dependent_noise(
            train, spec.epsilon, spec.source_class, spec.target_class, spec.seed
        )
    if spec.glitch_type == GLITCH_NEAR_CA:
        return inject_near_ca(train, spec.epsilon, spec.source_class, spec.seed)
    if spec.glitch_type == GLITCH_FAR_CA:
        if foreign is None:
            raise ValidationError("far_ca injection needs a foreign dataset")
        return inject_far_ca(
            train, foreign, spec.foreign_class, spec.epsilon, spec.seed, id_floor=id_floor
        )
    return inject_outliers(
        train, spec.epsilon, spec.corruption, spec.corruption_magnitude, spec.seed
    )


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 <= epsilon < 1.0:
        raise ValidationError("epsilon must be in [0, 1)")


def _table(
    data: Dataset, flagged_rows: np.ndarray, glitch_type: str, record_original: bool = False
) -> ErrorTable:
    width = max(len(glitch_type), len(CLEAN))
    kinds = np.full(data.n, CLEAN, dtype=f"<U{width}")
    originals = np.full(data.n, _NO_ORIGINAL, dtype=np.int64)
    flagged_rows = np.asarray(flagged_rows, dtype=np.int64)
    kinds[flagged_rows] = glitch_type
    if record_original:
        originals[flagged_rows] = data.labels[flagged_rows]
    return ErrorTable(data.sample_ids.copy(), kinds, originals)
