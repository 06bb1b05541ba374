"""Dynamic influence scores traced over a checkpoint trail.

For a training sample z_i and a probe z_j, the per-epoch influence at epoch t
is ``w_i(t) * <g(z_j, theta_t), g(z_i, theta_t)>`` where g is the flattened
last-layer gradient at that epoch's checkpoint and the weight depends on the
mode:

* ``paper``: w_i(t) = lr_t / |B_t(i)|, with |B_t(i)| the size of the batch
  that contained z_i during epoch t (every sample is batched exactly once per
  epoch, so every epoch contributes).
* ``checkpoint``: w_i(t) = lr_t, the classic checkpoint approximation that
  drops the batch-size factor.

The cumulative score is the sum of per-epoch scores, accumulated in epoch
order in float64 so runs are bit-reproducible. Self-influence uses the same
formula with the probe equal to the training sample itself, i.e. a weighted
squared gradient norm, hence never negative.

Binary container (little-endian): ``magic b"GINF" | uint32 version=1 |
uint8 mode (0=paper, 1=checkpoint) | uint32 T, n, m | train_ids n*int64 |
val_ids m*int64 | per_epoch T*n*m float64 | per_epoch_self T*n float64 |
cumulative n*m float64 | cumulative_self n float64`` (row-major throughout).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ValidationError
from .models import CheckpointTrail, last_layer_gradients
from .util import format_float

MODES = ("paper", "checkpoint")

_MAGIC = b"GINF"
_VERSION = 1


@dataclass(frozen=True)
class InfluenceTensor:
    """Per-epoch and cumulative train-to-validation influence plus self-influence."""

    mode: str
    train_ids: np.ndarray
    val_ids: np.ndarray
    per_epoch: np.ndarray
    cumulative: np.ndarray
    per_epoch_self: np.ndarray | None = None
    cumulative_self: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        train_ids = np.array(self.train_ids, dtype=np.int64)
        val_ids = np.array(self.val_ids, dtype=np.int64)
        per_epoch = np.array(self.per_epoch, dtype=np.float64)
        cumulative = np.array(self.cumulative, dtype=np.float64)
        n, m = train_ids.shape[0], val_ids.shape[0]
        if per_epoch.ndim != 3 or per_epoch.shape[1:] != (n, m):
            raise ValidationError("per_epoch must have shape (T, n_train, n_val)")
        if cumulative.shape != (n, m):
            raise ValidationError("cumulative must have shape (n_train, n_val)")
        if (self.per_epoch_self is None) != (self.cumulative_self is None):
            raise ValidationError("self channels must be present together")
        arrays = [train_ids, val_ids, per_epoch, cumulative]
        per_epoch_self = cumulative_self = None
        if self.per_epoch_self is not None:
            per_epoch_self = np.array(self.per_epoch_self, dtype=np.float64)
            cumulative_self = np.array(self.cumulative_self, dtype=np.float64)
            if per_epoch_self.shape != (per_epoch.shape[0], n):
                raise ValidationError("per_epoch_self must have shape (T, n_train)")
            if cumulative_self.shape != (n,):
                raise ValidationError("cumulative_self must have shape (n_train,)")
            arrays += [per_epoch_self, cumulative_self]
        for arr in arrays:
            arr.flags.writeable = False
        object.__setattr__(self, "train_ids", train_ids)
        object.__setattr__(self, "val_ids", val_ids)
        object.__setattr__(self, "per_epoch", per_epoch)
        object.__setattr__(self, "cumulative", cumulative)
        object.__setattr__(self, "per_epoch_self", per_epoch_self)
        object.__setattr__(self, "cumulative_self", cumulative_self)

    @property
    def num_epochs(self) -> int:
        return self.per_epoch.shape[0]

    @property
    def n_train(self) -> int:
        return self.train_ids.shape[0]

    @property
    def n_val(self) -> int:
        return self.val_ids.shape[0]

    def to_file(self, path: str | Path) -> None:
        if self.per_epoch_self is None:
            raise ValidationError("persistence requires the self channels")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(
                struct.pack(
                    "<IBIII",
                    _VERSION,
                    MODES.index(self.mode),
                    self.num_epochs,
                    self.n_train,
                    self.n_val,
                )
            )
            fh.write(self.train_ids.astype("<i8").tobytes())
            fh.write(self.val_ids.astype("<i8").tobytes())
            for arr in (self.per_epoch, self.per_epoch_self, self.cumulative, self.cumulative_self):
                fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())

    @classmethod
    def from_file(cls, path: str | Path) -> "InfluenceTensor":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValidationError(f"{path}: not an influence container")
            version, mode_code, T, n, m = struct.unpack("<IBIII", fh.read(17))
            if version != _VERSION:
                raise ValidationError(f"{path}: unsupported influence version {version}")
            train_ids = np.frombuffer(fh.read(8 * n), dtype="<i8").astype(np.int64)
            val_ids = np.frombuffer(fh.read(8 * m), dtype="<i8").astype(np.int64)
            per_epoch = np.frombuffer(fh.read(8 * T * n * m), dtype="<f8").reshape(T, n, m)
            per_epoch_self = np.frombuffer(fh.read(8 * T * n), dtype="<f8").reshape(T, n)
            cumulative = np.frombuffer(fh.read(8 * n * m), dtype="<f8").reshape(n, m)
            cumulative_self = np.frombuffer(fh.read(8 * n), dtype="<f8")
        return cls(
            mode=MODES[mode_code],
            train_ids=train_ids,
            val_ids=val_ids,
            per_epoch=per_epoch,
            cumulative=cumulative,
            per_epoch_self=per_epoch_self,
            cumulative_self=cumulative_self,
        )


def epoch_influence(
    trail: CheckpointTrail,
    train: Dataset,
    probes: Dataset,
    epoch: int,
    mode: str = "paper",
) -> np.ndarray:
    """Train x probe influence matrix for one epoch's checkpoint."""
    if not 0 <= epoch < trail.num_epochs:
        raise ValidationError(f"epoch {epoch} out of range [0, {trail.num_epochs})")
    _check_ids(trail, train, probes)
    weights = _row_weights(trail, epoch, mode)
    g_train = _flat_gradients(trail, epoch, train)
    if probes is train:
        g_probe = g_train
    else:
        g_probe = _flat_gradients(trail, epoch, probes)
    return weights[:, None] * (g_train @ g_probe.T)


def tracin(
    trail: CheckpointTrail,
    train: Dataset,
    validation: Dataset,
    mode: str = "paper",
) -> InfluenceTensor:
    """Full influence tensor: per-epoch slices, cumulative sums, self channel.

    Validation gradients are computed once per epoch; self-influence reuses
    the training gradients (probe = the sample itself), so it costs a row
    norm, not an n x n product.
    """
    _check_ids(trail, train, validation)
    if set(validation.sample_ids.tolist()) & set(train.sample_ids.tolist()):
        raise ValidationError("validation ids overlap train ids")
    T, n, m = trail.num_epochs, train.n, validation.n
    per_epoch = np.empty((T, n, m), dtype=np.float64)
    per_epoch_self = np.empty((T, n), dtype=np.float64)
    for t in range(T):
        weights = _row_weights(trail, t, mode)
        g_train = _flat_gradients(trail, t, train)
        g_val = _flat_gradients(trail, t, validation)
        per_epoch[t] = weights[:, None] * (g_train @ g_val.T)
        per_epoch_self[t] = weights * np.einsum("ij,ij->i", g_train, g_train)
    cumulative = np.zeros((n, m), dtype=np.float64)
    cumulative_self = np.zeros(n, dtype=np.float64)
    for t in range(T):
        cumulative += per_epoch[t]
        cumulative_self += per_epoch_self[t]
    return InfluenceTensor(
        mode=mode,
        train_ids=train.sample_ids,
        val_ids=validation.sample_ids,
        per_epoch=per_epoch,
        cumulative=cumulative,
        per_epoch_self=per_epoch_self,
        cumulative_self=cumulative_self,
    )


def export_cumulative_csv(tensor: InfluenceTensor, path: str | Path) -> None:
    """Long-format dump of the cumulative matrix: train_id, val_id, influence."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("train_id,val_id,influence\n")
        for i, tid in enumerate(tensor.train_ids.tolist()):
            row = tensor.cumulative[i]
            for j, vid in enumerate(tensor.val_ids.tolist()):
                fh.write(f"{tid},{vid},{format_float(row[j])}\n")


def export_self_csv(tensor: InfluenceTensor, path: str | Path) -> None:
    if tensor.cumulative_self is None:
        raise ValidationError("tensor has no self channel")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("train_id,self_influence\n")
        for tid, value in zip(tensor.train_ids.tolist(), tensor.cumulative_self.tolist()):
            fh.write(f"{tid},{format_float(value)}\n")


def _check_ids(trail: CheckpointTrail, train: Dataset, probes: Dataset) -> None:
    if not np.array_equal(trail.train_ids, train.sample_ids):
        raise ValidationError("trail ids do not match training dataset ids")
    if probes is train or np.array_equal(probes.sample_ids, train.sample_ids):
        return
    if set(probes.sample_ids.tolist()) & set(train.sample_ids.tolist()):
        raise ValidationError("probe ids must be disjoint from train ids (or identical)")


def _row_weights(trail: CheckpointTrail, epoch: int, mode: str) -> np.ndarray:
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    cp = trail.checkpoints[epoch]
    if mode == "paper":
        return cp.learning_rate / cp.batch_sizes()[cp.batch_index]
    return np.full(trail.train_ids.shape[0], cp.learning_rate)


def _flat_gradients(trail: CheckpointTrail, epoch: int, data: Dataset) -> np.ndarray:
    cp = trail.checkpoints[epoch]
    g = last_layer_gradients(trail.architecture, cp.params, data.features, data.labels)
    return g.reshape(data.n, -1)
