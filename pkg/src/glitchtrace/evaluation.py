"""Detection scoring, per-epoch analysis, ratio sweeps, and the LOOR oracle.

The detection protocol treats the injected glitch count as known: a ranking's
top-k samples are flagged, where k is the error table's glitch count. With
|flagged| = |glitched| = k, precision equals recall equals F1 = overlap / k,
so every F1 lands on the grid {0, 1/k, ..., 1}.

``loor_oracle`` is the expensive ground truth the influence engine
approximates: retrain once per removed sample (identical seed and
initialization) and record how every probe's loss moved. It is deliberately
restricted to small full-batch logistic instances, where leave-one-out
retraining is well posed.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .data import Dataset, stratified_split, stratified_subsample
from .errors import ValidationError
from .glitches import ErrorTable, GlitchSpec, apply_glitch
from .influence import InfluenceTensor, tracin
from .models import CheckpointTrail, ModelConfig, sample_losses
from .models import train as train_model
from .signals import SIGNALS, SignalRanking, compute_signal
from .util import format_float, stage_seed

SUBSAMPLE_STAGE, SPLIT_STAGE, GLITCH_STAGE, MODEL_STAGE = 0, 1, 2, 3

RESULT_COLUMNS = ("dataset", "model", "glitch_type", "ratio", "seed", "signal", "epoch_scope", "f1")
SWEEP_COLUMNS = RESULT_COLUMNS + ("runtime_ms",)

_LOOR_MAX_N = 64


@dataclass(frozen=True)
class DetectionResult:
    signal: str
    glitch_type: str
    glitch_ratio: float
    epoch_scope: str
    f1: float
    flagged_ids: tuple
    seed: int


@dataclass(frozen=True)
class LoorRecord:
    removed_id: int
    probe_id: int
    loss_delta: float


@dataclass(frozen=True)
class PerEpochDetection:
    signal: str
    epoch_results: tuple
    cumulative: "DetectionResult"

    @property
    def max_epoch_f1(self) -> float:
        return max(r.f1 for r in self.epoch_results)

    @property
    def best_epoch(self) -> int:
        f1s = [r.f1 for r in self.epoch_results]
        return int(np.argmax(f1s))

    @property
    def epoch0_f1(self) -> float:
        return self.epoch_results[0].f1


def f1_at_known_ratio(
    ranking: SignalRanking, truth: ErrorTable, seed: int = 0
) -> DetectionResult:
    """Flag the ranking's top-k where k is the true glitch count; score overlap/k."""
    if set(ranking.sample_ids.tolist()) != set(truth.sample_ids.tolist()):
        raise ValidationError("ranking ids do not match error table ids")
    glitched = set(truth.glitched_ids().tolist())
    k = len(glitched)
    if k == 0:
        raise ValidationError("error table flags no glitches")
    flagged = ranking.top(k)
    overlap = len(set(flagged.tolist()) & glitched)
    return DetectionResult(
        signal=ranking.signal,
        glitch_type=truth.dominant_type(),
        glitch_ratio=k / truth.sample_ids.size,
        epoch_scope=ranking.epoch_scope,
        f1=overlap / k,
        flagged_ids=tuple(sorted(int(s) for s in flagged)),
        seed=seed,
    )


def f1_at_percentile(
    ranking: SignalRanking, truth: ErrorTable, percentile: float, seed: int = 0
) -> DetectionResult:
    """Exploratory variant: flag the top ``percentile`` fraction of the ranking.

    Unlike the known-ratio protocol, |flagged| generally differs from the true
    glitch count, so F1 is the usual harmonic mean of precision and recall.
    The known-ratio protocol stays the reported metric; this one is for poking
    at rankings when no ratio is assumed.
    """
    if not 0.0 < percentile <= 1.0:
        raise ValidationError("percentile must be in (0, 1]")
    if set(ranking.sample_ids.tolist()) != set(truth.sample_ids.tolist()):
        raise ValidationError("ranking ids do not match error table ids")
    glitched = set(truth.glitched_ids().tolist())
    if not glitched:
        raise ValidationError("error table flags no glitches")
    count = max(1, int(round(percentile * ranking.sample_ids.size)))
    flagged = set(ranking.top(count).tolist())
    overlap = len(flagged & glitched)
    precision = overlap / len(flagged)
    recall = overlap / len(glitched)
    f1 = 0.0 if overlap == 0 else 2 * precision * recall / (precision + recall)
    return DetectionResult(
        signal=ranking.signal,
        glitch_type=truth.dominant_type(),
        glitch_ratio=len(glitched) / truth.sample_ids.size,
        epoch_scope=ranking.epoch_scope,
        f1=f1,
        flagged_ids=tuple(sorted(flagged)),
        seed=seed,
    )


def per_epoch_detection(
    tensor: InfluenceTensor,
    truth: ErrorTable,
    signal: str,
    train_labels: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    seed: int = 0,
) -> PerEpochDetection:
    """Score one signal on every per-epoch slice and on the cumulative tensor."""
    epoch_results = []
    for t in range(tensor.num_epochs):
        ranking = compute_signal(signal, tensor, train_labels, val_labels, epoch=t)
        epoch_results.append(f1_at_known_ratio(ranking, truth, seed=seed))
    cumulative = f1_at_known_ratio(
        compute_signal(signal, tensor, train_labels, val_labels), truth, seed=seed
    )
    return PerEpochDetection(signal=signal, epoch_results=tuple(epoch_results), cumulative=cumulative)


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything one detection run needs except the glitch ratio and seed.

    ``glitch.epsilon`` and all per-operation seeds are overridden per cell,
    so a plan plus (ratio, seed) fully determines a run.
    """

    dataset_name: str
    base: Dataset
    glitch: GlitchSpec
    model: ModelConfig
    foreign: Dataset | None = None
    signals: tuple = SIGNALS
    mode: str = "paper"
    subsample_fraction: float | None = None
    train_fraction: float = 0.8
    subsample_before_split: bool = True
    per_epoch: bool = False


@dataclass(frozen=True)
class ExperimentArtifacts:
    """Everything a finished in-memory run produced."""

    results: tuple
    truth: ErrorTable
    tensor: InfluenceTensor
    trail: CheckpointTrail
    train: Dataset
    validation: Dataset


def run_experiment(plan: ExperimentPlan, ratio: float, seed: int) -> ExperimentArtifacts:
    """One end-to-end in-memory run: split, inject, train, trace, score.

    Per-stage seeds are derived from ``seed`` with :func:`util.stage_seed`,
    so the stages draw decoupled streams but the whole run is a pure function
    of (plan, ratio, seed).
    """
    data = plan.base
    if plan.subsample_before_split and plan.subsample_fraction is not None:
        data = stratified_subsample(data, plan.subsample_fraction, stage_seed(seed, SUBSAMPLE_STAGE))
    split = stratified_split(data, plan.train_fraction, stage_seed(seed, SPLIT_STAGE))
    train_set, validation = split.train, split.validation
    if not plan.subsample_before_split and plan.subsample_fraction is not None:
        sub_seed = stage_seed(seed, SUBSAMPLE_STAGE)
        train_set = stratified_subsample(train_set, plan.subsample_fraction, sub_seed)
        validation = stratified_subsample(validation, plan.subsample_fraction, sub_seed + 1)
    spec = replace(plan.glitch, epsilon=ratio, seed=stage_seed(seed, GLITCH_STAGE))
    id_floor = int(plan.base.sample_ids.max()) + 1
    glitched, truth = apply_glitch(train_set, spec, foreign=plan.foreign, id_floor=id_floor)
    trail = train_model(glitched, replace(plan.model, seed=stage_seed(seed, MODEL_STAGE)))
    tensor = tracin(trail, glitched, validation, plan.mode)
    results = []
    for name in plan.signals:
        scopes: list[int | None] = [None]
        if plan.per_epoch:
            scopes += list(range(tensor.num_epochs))
        for epoch in scopes:
            ranking = compute_signal(name, tensor, glitched.labels, validation.labels, epoch)
            results.append(f1_at_known_ratio(ranking, truth, seed=seed))
    return ExperimentArtifacts(
        results=tuple(results),
        truth=truth,
        tensor=tensor,
        trail=trail,
        train=glitched,
        validation=validation,
    )


def ratio_sweep(
    plan: ExperimentPlan,
    ratios: Iterable[float],
    seeds: Iterable[int],
    workers: int = 1,
) -> Iterator[dict]:
    """Full pipeline per (ratio, seed); yields one row per signal, incrementally.

    Rows appear in deterministic (ratio, seed, signal) order regardless of the
    worker count; ``runtime_ms`` is the wall time of the cell that produced
    the row.
    """
    cells = [(float(r), int(s)) for r in ratios for s in seeds]
    if workers <= 1:
        for ratio, seed in cells:
            yield from _sweep_cell(plan, ratio, seed)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell, plan, ratio, seed) for ratio, seed in cells]
            for future in futures:
                yield from future.result()


def _sweep_cell(plan: ExperimentPlan, ratio: float, seed: int) -> list[dict]:
    start = time.perf_counter()
    artifacts = run_experiment(plan, ratio, seed)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    rows = []
    for result in artifacts.results:
        rows.append(
            {
                "dataset": plan.dataset_name,
                "model": plan.model.architecture,
                "glitch_type": result.glitch_type,
                "ratio": ratio,
                "seed": seed,
                "signal": result.signal,
                "epoch_scope": result.epoch_scope,
                "f1": result.f1,
                "runtime_ms": elapsed_ms,
            }
        )
    return rows


def summarize_sweep(rows: Iterable[dict]) -> list[dict]:
    """Mean F1 per (glitch_type, ratio, signal, epoch_scope) cell, seeds pooled."""
    buckets: dict[tuple, list[float]] = {}
    for row in rows:
        key = (row["glitch_type"], float(row["ratio"]), row["signal"], row["epoch_scope"])
        buckets.setdefault(key, []).append(float(row["f1"]))
    summary = []
    for key in sorted(buckets):
        glitch_type, ratio, signal, scope = key
        values = buckets[key]
        summary.append(
            {
                "glitch_type": glitch_type,
                "ratio": ratio,
                "signal": signal,
                "epoch_scope": scope,
                "mean_f1": float(np.mean(values)),
                "runs": len(values),
            }
        )
    return summary


def write_rows_csv(path: str | Path, rows: Iterable[dict], columns: tuple) -> int:
    """Stream rows to CSV (floats in shortest round-trip form); returns row count."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(columns))
        for row in rows:
            formatted = []
            for col in columns:
                value = row[col]
                formatted.append(format_float(value) if isinstance(value, float) else str(value))
            writer.writerow(formatted)
            count += 1
    return count


def read_rows_csv(path: str | Path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            parsed = dict(row)
            for key in ("ratio", "f1", "mean_f1", "runtime_ms"):
                if key in parsed and parsed[key] is not None:
                    parsed[key] = float(parsed[key])
            if "seed" in parsed and parsed["seed"] is not None:
                parsed["seed"] = int(parsed["seed"])
            rows.append(parsed)
    return rows


def loor_oracle(
    train: Dataset, validation: Dataset, config: ModelConfig
) -> list[LoorRecord]:
    """Leave-one-out retraining deltas: one baseline plus n retrainings.

    Every retraining reuses the configured seed, so initialization is
    identical; full-batch training makes the update sequence independent of
    the shuffle. Each record pairs a removed training sample with a probe
    (every validation sample, plus the removed sample itself as a held-out
    probe).
    """
    if train.n > _LOOR_MAX_N:
        raise ValidationError(f"loor_oracle is capped at n <= {_LOOR_MAX_N}")
    if config.architecture != "logistic":
        raise ValidationError("loor_oracle requires the logistic architecture")
    if config.batch_size != train.n:
        raise ValidationError("loor_oracle requires full-batch training")
    baseline = train_model(train, config)
    base_val_losses = sample_losses(
        "logistic", baseline.final_params, validation.features, validation.labels
    )
    base_self_losses = sample_losses(
        "logistic", baseline.final_params, train.features, train.labels
    )
    records = []
    for i in range(train.n):
        keep = np.arange(train.n) != i
        reduced = Dataset(
            train.features[keep], train.labels[keep], train.sample_ids[keep], train.class_count
        )
        retrained = train_model(reduced, replace(config, batch_size=reduced.n))
        removed_id = int(train.sample_ids[i])
        val_losses = sample_losses(
            "logistic", retrained.final_params, validation.features, validation.labels
        )
        for j, probe_id in enumerate(validation.sample_ids.tolist()):
            records.append(
                LoorRecord(removed_id, int(probe_id), float(val_losses[j] - base_val_losses[j]))
            )
        self_loss = sample_losses(
            "logistic",
            retrained.final_params,
            train.features[i][None, :],
            train.labels[i][None],
        )[0]
        records.append(LoorRecord(removed_id, removed_id, float(self_loss - base_self_losses[i])))
    return records


def loor_deltas_matrix(
    records: list[LoorRecord], train_ids: np.ndarray, val_ids: np.ndarray
) -> np.ndarray:
    """Arrange validation-probe deltas as an (n_train, n_val) matrix."""
    row = {int(t): i for i, t in enumerate(train_ids)}
    col = {int(v): j for j, v in enumerate(val_ids)}
    out = np.full((len(row), len(col)), np.nan)
    for record in records:
        if record.probe_id in col and record.removed_id in row:
            out[row[record.removed_id], col[record.probe_id]] = record.loss_delta
    if np.isnan(out).any():
        raise ValidationError("records do not cover the full train x validation grid")
    return out
