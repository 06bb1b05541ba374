"""Per-sample detection signals aggregated from an influence tensor.

Four signals, all oriented so that higher means more suspicious:

* ``self_influence`` — a sample's influence on itself (non-negative).
* ``marginal_influence`` — signed sum of its influence over validation, so
  positive and negative contributions can cancel.
* ``average_absolute_influence`` — mean absolute influence over validation,
  immune to that cancellation.
* ``gd_class`` — minimum over classes of the class-restricted validation
  sums. By default every training sample is scored against every class
  present in validation; ``condition_on_train_label=True`` restricts each
  sample to its own class's validation columns instead.

Scores can be taken from the cumulative tensor (``epoch=None``) or from a
single per-epoch slice. Rankings sort by descending score with ties broken
by ascending sample id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .influence import InfluenceTensor
from .util import format_float

SIGNALS = (
    "self_influence",
    "marginal_influence",
    "average_absolute_influence",
    "gd_class",
)

CUMULATIVE_SCOPE = "cumulative"


def scope_label(epoch: int | None) -> str:
    return CUMULATIVE_SCOPE if epoch is None else f"epoch={epoch}"


def parse_scope(label: str) -> int | None:
    if label == CUMULATIVE_SCOPE:
        return None
    if label.startswith("epoch="):
        return int(label[len("epoch="):])
    raise ValidationError(f"bad epoch scope {label!r}")


@dataclass(frozen=True)
class SignalRanking:
    """Scores for every training sample plus the induced descending order."""

    signal: str
    sample_ids: np.ndarray
    scores: np.ndarray
    epoch: int | None = None
    order: np.ndarray = None

    def __post_init__(self):
        sample_ids = np.array(self.sample_ids, dtype=np.int64)
        scores = np.array(self.scores, dtype=np.float64)
        if sample_ids.shape != scores.shape or sample_ids.ndim != 1:
            raise ValidationError("sample_ids and scores must be aligned vectors")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("scores must be finite")
        order = rank(scores, sample_ids)
        for arr in (sample_ids, scores, order):
            arr.flags.writeable = False
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "order", order)

    @property
    def epoch_scope(self) -> str:
        return scope_label(self.epoch)

    def top(self, k: int) -> np.ndarray:
        return self.order[:k]

    def score_by_id(self) -> dict[int, float]:
        return dict(zip(self.sample_ids.tolist(), self.scores.tolist()))


def rank(scores: np.ndarray, sample_ids: np.ndarray) -> np.ndarray:
    """Ids sorted by descending score, ties broken by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    sample_ids = np.asarray(sample_ids, dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    idx = np.lexsort((sample_ids, -scores))
    return sample_ids[idx]


def self_influence(tensor: InfluenceTensor, epoch: int | None = None) -> SignalRanking:
    if tensor.cumulative_self is None:
        raise ValidationError("tensor has no self channel")
    if epoch is None:
        scores = tensor.cumulative_self
    else:
        _check_epoch(tensor, epoch)
        scores = tensor.per_epoch_self[epoch]
    return SignalRanking("self_influence", tensor.train_ids, scores, epoch)


def marginal_influence(tensor: InfluenceTensor, epoch: int | None = None) -> SignalRanking:
    scores = _matrix(tensor, epoch).sum(axis=1)
    return SignalRanking("marginal_influence", tensor.train_ids, scores, epoch)


def average_absolute_influence(
    tensor: InfluenceTensor, epoch: int | None = None
) -> SignalRanking:
    scores = np.abs(_matrix(tensor, epoch)).mean(axis=1)
    return SignalRanking("average_absolute_influence", tensor.train_ids, scores, epoch)


def gd_class(
    tensor: InfluenceTensor,
    train_labels: np.ndarray,
    val_labels: np.ndarray,
    epoch: int | None = None,
    condition_on_train_label: bool = False,
) -> SignalRanking:
    """Min over classes of the class-restricted validation influence sums."""
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if train_labels.shape[0] != tensor.n_train:
        raise ValidationError("train_labels misaligned with tensor")
    if val_labels.shape[0] != tensor.n_val:
        raise ValidationError("val_labels misaligned with tensor")
    matrix = _matrix(tensor, epoch)
    present = np.unique(val_labels)
    if present.size == 0:
        raise ValidationError("no classes present in validation")
    partials = np.stack([matrix[:, val_labels == c].sum(axis=1) for c in present])
    if condition_on_train_label:
        missing = np.setdiff1d(np.unique(train_labels), present)
        if missing.size:
            raise ValidationError(
                f"classes {missing.tolist()} absent from validation; "
                "cannot condition on train labels"
            )
        class_pos = {int(c): i for i, c in enumerate(present)}
        rows = np.array([class_pos[int(y)] for y in train_labels])
        scores = partials[rows, np.arange(tensor.n_train)]
    else:
        scores = partials.min(axis=0)
    return SignalRanking("gd_class", tensor.train_ids, scores, epoch)


def compute_signal(
    name: str,
    tensor: InfluenceTensor,
    train_labels: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    epoch: int | None = None,
) -> SignalRanking:
    """Dispatch a signal by name; gd_class needs the label vectors."""
    if name == "self_influence":
        return self_influence(tensor, epoch)
    if name == "marginal_influence":
        return marginal_influence(tensor, epoch)
    if name == "average_absolute_influence":
        return average_absolute_influence(tensor, epoch)
    if name == "gd_class":
        if train_labels is None or val_labels is None:
            raise ValidationError("gd_class needs train and validation labels")
        return gd_class(tensor, train_labels, val_labels, epoch)
    raise ValidationError(f"unknown signal {name!r}; choose from {SIGNALS}")


def rankings_to_csv(rankings: list[SignalRanking], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "signal", "epoch_scope", "score", "rank"])
        for ranking in rankings:
            by_id = ranking.score_by_id()
            for position, sid in enumerate(ranking.order.tolist(), start=1):
                writer.writerow(
                    [
                        str(sid),
                        ranking.signal,
                        ranking.epoch_scope,
                        format_float(by_id[sid]),
                        str(position),
                    ]
                )


def rankings_from_csv(path: str | Path) -> list[SignalRanking]:
    groups: dict[tuple[str, str], list[tuple[int, float]]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["sample_id", "signal", "epoch_scope", "score", "rank"]:
            raise ValidationError(f"{path}: unexpected rankings header {header}")
        for row in reader:
            if not row:
                continue
            groups.setdefault((row[1], row[2]), []).append((int(row[0]), float(row[3])))
    rankings = []
    for (signal, scope), pairs in groups.items():
        ids = np.array([p[0] for p in pairs], dtype=np.int64)
        scores = np.array([p[1] for p in pairs], dtype=np.float64)
        rankings.append(SignalRanking(signal, ids, scores, parse_scope(scope)))
    return rankings


def _matrix(tensor: InfluenceTensor, epoch: int | None) -> np.ndarray:
    if epoch is None:
        return tensor.cumulative
    _check_epoch(tensor, epoch)
    return tensor.per_epoch[epoch]


def _check_epoch(tensor: InfluenceTensor, epoch: int) -> None:
    if not 0 <= epoch < tensor.num_epochs:
        raise ValidationError(f"epoch {epoch} out of range [0, {tensor.num_epochs})")
