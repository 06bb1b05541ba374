"""Small gradient-descent classifiers with per-epoch checkpoint recording.

Two architectures train on cross-entropy with plain SGD (no momentum, no
weight decay): multinomial logistic regression and a one-hidden-layer ReLU
MLP. Training records a :class:`CheckpointTrail`: the parameters at the start
of every epoch, that epoch's learning rate, and the batch each sample landed
in. The trail is everything the influence engine needs.

Reproducibility rules
---------------------
* Initialization is seeded uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
  per layer (weights then bias), drawn in layer order.
* Batches come from a seeded per-epoch permutation sliced into chunks of
  ``batch_size``; members of a batch are processed in ascending row order, so
  replaying a trail's recorded assignments reproduces training bit-exactly.
* The learning rate at epoch t is ``learning_rate * lr_decay ** t``
  (constant by default).

Parameter layout (also the order used in the binary trail container):
logistic ``(W[k,d], b[k])``; mlp ``(W1[h,d], b1[h], W2[k,h], b2[k])``.

Binary trail container (all little-endian)
------------------------------------------
``magic b"GTRL" | uint32 version=1 | uint8 arch (0=logistic, 1=mlp) |
uint32 d, k, h, T, n | train_ids n*int64 |`` then per epoch
``float64 lr | params float64 (flattened, layout above) | batch_index
n*int32`` and finally the flattened final parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import TrainingDivergenceError, ValidationError
from .util import rng_from_seed

ARCHITECTURES = ("logistic", "mlp")

_MAGIC = b"GTRL"
_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    hidden_units: int = 32
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(f"architecture must be one of {ARCHITECTURES}")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.architecture == "mlp" and self.hidden_units < 1:
            raise ValidationError("mlp needs hidden_units >= 1")
        if not self.lr_decay > 0:
            raise ValidationError("lr_decay must be > 0")


@dataclass(frozen=True)
class Checkpoint:
    """State at the start of one epoch: parameters, lr, batch assignments.

    ``batch_index[i]`` is the batch that the i-th training row (in trail row
    order) joined during this epoch.
    """

    epoch: int
    architecture: str
    params: tuple
    learning_rate: float
    batch_index: np.ndarray

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("learning rate must be > 0")
        params = tuple(np.ascontiguousarray(p, dtype=np.float64) for p in self.params)
        batch_index = np.array(self.batch_index, dtype=np.int64)
        counts = np.bincount(batch_index)
        if counts.size == 0 or np.any(counts == 0):
            raise ValidationError("batch indices must cover 0..num_batches-1")
        for p in params:
            p.flags.writeable = False
        batch_index.flags.writeable = False
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "batch_index", batch_index)

    def batch_sizes(self) -> np.ndarray:
        return np.bincount(self.batch_index)


@dataclass(frozen=True)
class CheckpointTrail:
    architecture: str
    feature_dim: int
    class_count: int
    hidden_units: int
    train_ids: np.ndarray
    checkpoints: tuple
    final_params: tuple

    def __post_init__(self):
        train_ids = np.array(self.train_ids, dtype=np.int64)
        train_ids.flags.writeable = False
        object.__setattr__(self, "train_ids", train_ids)
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))
        epochs = [c.epoch for c in self.checkpoints]
        if epochs != list(range(len(epochs))) or not epochs:
            raise ValidationError("checkpoints must cover epochs 0..T-1 in order")
        for c in self.checkpoints:
            if c.batch_index.shape[0] != train_ids.shape[0]:
                raise ValidationError("batch assignments must cover every training sample")
        final = tuple(np.ascontiguousarray(p, dtype=np.float64) for p in self.final_params)
        for p in final:
            p.flags.writeable = False
        object.__setattr__(self, "final_params", final)

    @property
    def num_epochs(self) -> int:
        return len(self.checkpoints)

    def batch_assignment_map(self, epoch: int) -> dict[int, int]:
        """sample_id -> batch index for one epoch."""
        cp = self.checkpoints[epoch]
        return dict(zip(self.train_ids.tolist(), cp.batch_index.tolist()))

    def to_file(self, path: str | Path) -> None:
        arch_code = ARCHITECTURES.index(self.architecture)
        n = self.train_ids.shape[0]
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(
                struct.pack(
                    "<IBIIIII",
                    _VERSION,
                    arch_code,
                    self.feature_dim,
                    self.class_count,
                    self.hidden_units,
                    self.num_epochs,
                    n,
                )
            )
            fh.write(self.train_ids.astype("<i8").tobytes())
            for cp in self.checkpoints:
                fh.write(struct.pack("<d", cp.learning_rate))
                fh.write(_flatten_params(cp.params).astype("<f8").tobytes())
                fh.write(cp.batch_index.astype("<i4").tobytes())
            fh.write(_flatten_params(self.final_params).astype("<f8").tobytes())

    @classmethod
    def from_file(cls, path: str | Path) -> "CheckpointTrail":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValidationError(f"{path}: not a checkpoint trail container")
            version, arch_code, d, k, h, num_epochs, n = struct.unpack("<IBIIIII", fh.read(25))
            if version != _VERSION:
                raise ValidationError(f"{path}: unsupported trail version {version}")
            architecture = ARCHITECTURES[arch_code]
            train_ids = np.frombuffer(fh.read(8 * n), dtype="<i8").astype(np.int64)
            param_count = _param_count(architecture, d, k, h)
            checkpoints = []
            for epoch in range(num_epochs):
                (lr,) = struct.unpack("<d", fh.read(8))
                flat = np.frombuffer(fh.read(8 * param_count), dtype="<f8")
                batch_index = np.frombuffer(fh.read(4 * n), dtype="<i4").astype(np.int64)
                checkpoints.append(
                    Checkpoint(
                        epoch=epoch,
                        architecture=architecture,
                        params=_unflatten_params(architecture, flat, d, k, h),
                        learning_rate=lr,
                        batch_index=batch_index,
                    )
                )
            flat = np.frombuffer(fh.read(8 * param_count), dtype="<f8")
            final_params = _unflatten_params(architecture, flat, d, k, h)
        return cls(architecture, d, k, h, train_ids, tuple(checkpoints), final_params)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train(data: Dataset, config: ModelConfig) -> CheckpointTrail:
    """Plain SGD on cross-entropy, checkpointing at the start of every epoch."""
    if config.batch_size > data.n:
        raise ValidationError(f"batch_size {config.batch_size} exceeds n={data.n}")
    hidden = config.hidden_units if config.architecture == "mlp" else 0
    rng = rng_from_seed(config.seed)
    params = _init_params(config.architecture, data.d, data.class_count, hidden, rng)
    checkpoints = []
    for epoch in range(config.epochs):
        lr = config.learning_rate * config.lr_decay**epoch
        perm = rng.permutation(data.n)
        batch_index = np.empty(data.n, dtype=np.int64)
        batch_index[perm] = np.arange(data.n) // config.batch_size
        checkpoints.append(
            Checkpoint(
                epoch=epoch,
                architecture=config.architecture,
                params=tuple(p.copy() for p in params),
                learning_rate=lr,
                batch_index=batch_index,
            )
        )
        params = _run_epoch(config.architecture, params, data, batch_index, lr, epoch)
    return CheckpointTrail(
        architecture=config.architecture,
        feature_dim=data.d,
        class_count=data.class_count,
        hidden_units=hidden,
        train_ids=data.sample_ids,
        checkpoints=tuple(checkpoints),
        final_params=params,
    )


def with_scaled_learning_rates(trail: CheckpointTrail, factor: float) -> CheckpointTrail:
    """Copy of a trail with every eta_t multiplied by ``factor``.

    Checkpoints and batch assignments are shared; influence computed from the
    scaled trail scales linearly, which the property suite exercises.
    """
    if not factor > 0:
        raise ValidationError("factor must be > 0")
    checkpoints = tuple(
        Checkpoint(
            epoch=cp.epoch,
            architecture=cp.architecture,
            params=cp.params,
            learning_rate=cp.learning_rate * factor,
            batch_index=cp.batch_index,
        )
        for cp in trail.checkpoints
    )
    return CheckpointTrail(
        trail.architecture,
        trail.feature_dim,
        trail.class_count,
        trail.hidden_units,
        trail.train_ids,
        checkpoints,
        trail.final_params,
    )


def replay_trail(trail: CheckpointTrail, data: Dataset) -> tuple:
    """Re-apply a trail's recorded updates from theta_0; returns final params.

    Uses the same epoch stepper as :func:`train`, so the result matches
    ``trail.final_params`` bit for bit.
    """
    if not np.array_equal(trail.train_ids, data.sample_ids):
        raise ValidationError("trail ids do not match dataset ids")
    params = trail.checkpoints[0].params
    for cp in trail.checkpoints:
        params = _run_epoch(
            trail.architecture, params, data, cp.batch_index, cp.learning_rate, cp.epoch
        )
    return params


def last_layer_gradient(checkpoint: Checkpoint, x: np.ndarray, y: int) -> np.ndarray:
    """Closed-form per-sample loss gradient w.r.t. final layer weights+bias.

    Returns the k x (h+1) matrix (softmax(logits) - onehot(y)) outer [a; 1],
    where a is the penultimate activation (the raw features for logistic).
    """
    g = last_layer_gradients(
        checkpoint.architecture,
        checkpoint.params,
        np.asarray(x, dtype=np.float64)[None, :],
        np.array([y], dtype=np.int64),
    )
    return g[0]


def last_layer_gradients(
    architecture: str, params: tuple, X: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Vectorized last-layer gradients, shape (n, k, h+1)."""
    A = _penultimate(architecture, params, X)
    if not np.all(np.isfinite(A)):
        raise ValidationError("non-finite activation")
    logits = _last_layer_logits(architecture, params, A)
    P = softmax(logits)
    E = P.copy()
    E[np.arange(y.shape[0]), y] -= 1.0
    Aug = np.hstack([A, np.ones((A.shape[0], 1))])
    return E[:, :, None] * Aug[:, None, :]


def predict_logits(architecture: str, params: tuple, X: np.ndarray) -> np.ndarray:
    A = _penultimate(architecture, params, X)
    return _last_layer_logits(architecture, params, A)


def sample_losses(architecture: str, params: tuple, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy losses."""
    logits = predict_logits(architecture, params, X)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(y.shape[0]), y]


def evaluate_accuracy(
    trail: CheckpointTrail, data: Dataset, subset: set[int] | None = None
) -> float:
    """Fraction of correct argmax predictions under the final parameters."""
    if subset is not None:
        subset = set(int(s) for s in subset)
        if not subset:
            raise ValidationError("subset is empty")
        known = set(data.sample_ids.tolist())
        if not subset <= known:
            raise ValidationError("subset contains unknown sample ids")
        mask = np.isin(data.sample_ids, sorted(subset))
        X, y = data.features[mask], data.labels[mask]
    else:
        X, y = data.features, data.labels
    logits = predict_logits(trail.architecture, trail.final_params, X)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def _init_params(architecture: str, d: int, k: int, h: int, rng: np.random.Generator) -> tuple:
    def layer(fan_in: int, *shape: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    if architecture == "logistic":
        return (layer(d, k, d), layer(d, k))
    return (layer(d, h, d), layer(d, h), layer(h, k, h), layer(h, k))


def _penultimate(architecture: str, params: tuple, X: np.ndarray) -> np.ndarray:
    if architecture == "logistic":
        return X
    W1, b1 = params[0], params[1]
    return np.maximum(X @ W1.T + b1, 0.0)


def _last_layer_logits(architecture: str, params: tuple, A: np.ndarray) -> np.ndarray:
    if architecture == "logistic":
        W, b = params
    else:
        W, b = params[2], params[3]
    return A @ W.T + b


def _batch_gradients(
    architecture: str, params: tuple, X: np.ndarray, y: np.ndarray
) -> tuple[tuple, float]:
    """Gradients of the mean cross-entropy over one batch, plus the loss."""
    n = X.shape[0]
    onehot_rows = np.arange(n)
    if architecture == "logistic":
        W, b = params
        logits = X @ W.T + b
        P = softmax(logits)
        loss = _mean_loss(logits, y)
        E = P
        E[onehot_rows, y] -= 1.0
        E /= n
        return (E.T @ X, E.sum(axis=0)), loss
    W1, b1, W2, b2 = params
    pre = X @ W1.T + b1
    A = np.maximum(pre, 0.0)
    logits = A @ W2.T + b2
    P = softmax(logits)
    loss = _mean_loss(logits, y)
    E = P
    E[onehot_rows, y] -= 1.0
    E /= n
    gW2 = E.T @ A
    gb2 = E.sum(axis=0)
    dA = E @ W2
    dZ = dA * (pre > 0)
    gW1 = dZ.T @ X
    gb1 = dZ.sum(axis=0)
    return (gW1, gb1, gW2, gb2), loss


def _mean_loss(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(y.shape[0]), y].mean())


def _run_epoch(
    architecture: str,
    params: tuple,
    data: Dataset,
    batch_index: np.ndarray,
    lr: float,
    epoch: int,
) -> tuple:
    num_batches = int(batch_index.max()) + 1
    for b in range(num_batches):
        rows = np.flatnonzero(batch_index == b)
        # overflow is handled by the finiteness check, not by numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            grads, loss = _batch_gradients(
                architecture, params, data.features[rows], data.labels[rows]
            )
        if not np.isfinite(loss):
            raise TrainingDivergenceError(epoch)
        params = tuple(p - lr * g for p, g in zip(params, grads))
    for p in params:
        if not np.all(np.isfinite(p)):
            raise TrainingDivergenceError(epoch)
    return params


def _flatten_params(params: tuple) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params])


def _param_count(architecture: str, d: int, k: int, h: int) -> int:
    if architecture == "logistic":
        return k * d + k
    return h * d + h + k * h + k


def _unflatten_params(architecture: str, flat: np.ndarray, d: int, k: int, h: int) -> tuple:
    if architecture == "logistic":
        return (flat[: k * d].reshape(k, d).copy(), flat[k * d :].copy())
    sizes = [h * d, h, k * h, k]
    shapes = [(h, d), (h,), (k, h), (k,)]
    out = []
    offset = 0
    for size, shape in zip(sizes, shapes):
        out.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    return tuple(out)
