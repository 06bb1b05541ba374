"""End-to-end experiment driver: config, staged execution, caching, export.

A run executes six stages, each persisting its artifact into its own
subdirectory of the output directory:

``data``       dataset.csv (standardized source), optional subsampled.csv,
               train.csv, validation.csv
``inject``     train_glitched.csv, error_table.csv
``train``      trail.bin
``influence``  influence.bin, influence_cumulative.csv, influence_self.csv
``signals``    rankings.csv
``evaluate``   results.csv plus rendered figures

Stages are content-addressed: each stage's hash covers its own parameters and
its upstream stage's hash, and a ``manifest.json`` in the stage directory
records that hash together with a content hash per artifact file. Re-running
with an identical config skips completed stages; a stage whose parameters
changed (or whose upstream changed) is recomputed. If an artifact file no
longer matches its manifest entry, consuming it raises
:class:`ChainIntegrityError` instead of silently proceeding.

Seeds: the data stage derives its subsample/split seeds from the config's
base ``seed`` (see :func:`util.stage_seed`); injection and training use the
explicit seeds carried by their own specs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, load_csv, make_blobs, stratified_split, stratified_subsample
from .errors import ChainIntegrityError, StageError, ValidationError
from .evaluation import (
    RESULT_COLUMNS,
    SWEEP_COLUMNS,
    ExperimentPlan,
    f1_at_known_ratio,
    ratio_sweep,
    summarize_sweep,
    write_rows_csv,
)
from .glitches import GLITCH_FAR_CA, ErrorTable, GlitchSpec, apply_glitch
from .influence import InfluenceTensor, export_cumulative_csv, export_self_csv, tracin
from .models import CheckpointTrail, ModelConfig
from .models import train as train_model
from .report import plot_f1_bars, plot_per_epoch_f1, plot_ratio_sweep
from .signals import SIGNALS, compute_signal, rankings_from_csv, rankings_to_csv
from .util import stage_seed

STAGES = ("data", "inject", "train", "influence", "signals", "evaluate")

WORKERS_ENV = "GLITCHTRACE_WORKERS"

_MANIFEST = "manifest.json"


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative manifest for one experiment (JSON on disk).

    Exactly one of ``csv`` (+ ``label_column``) or ``blobs`` describes the
    source data. ``ratios``/``seeds`` only matter to ``sweep``.
    """

    name: str
    model: ModelConfig
    glitches: tuple = ()
    csv: str | None = None
    label_column: str | None = None
    blobs: dict | None = None
    subsample_fraction: float | None = None
    subsample_before_split: bool = True
    train_fraction: float = 0.8
    influence_mode: str = "paper"
    signals: tuple = SIGNALS
    per_epoch: bool = True
    seed: int = 0
    ratios: tuple = ()
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if (self.csv is None) == (self.blobs is None):
            raise ValidationError("config needs exactly one of 'csv' or 'blobs'")
        if self.csv is not None and self.label_column is None:
            raise ValidationError("csv source needs 'label_column'")
        if self.blobs is not None:
            required = {"n", "d", "k", "separation", "seed"}
            if set(self.blobs) != required:
                raise ValidationError(f"blobs source needs exactly the keys {sorted(required)}")
        if not self.glitches:
            raise ValidationError("config needs at least one glitch spec")
        object.__setattr__(self, "glitches", tuple(self.glitches))
        object.__setattr__(self, "signals", tuple(self.signals))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        unknown = set(self.signals) - set(SIGNALS)
        if unknown:
            raise ValidationError(f"unknown signals {sorted(unknown)}")
        if self.influence_mode not in ("paper", "checkpoint"):
            raise ValidationError("influence_mode must be 'paper' or 'checkpoint'")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must be in (0, 1)")
        if self.subsample_fraction is not None and not 0.0 < self.subsample_fraction <= 1.0:
            raise ValidationError("subsample_fraction must be in (0, 1]")
        if self.csv is not None and not Path(self.csv).exists():
            raise ValidationError(f"dataset csv {self.csv!r} does not exist")
        for spec in self.glitches:
            if spec.foreign_csv is not None and not Path(spec.foreign_csv).exists():
                raise ValidationError(f"foreign csv {spec.foreign_csv!r} does not exist")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = asdict(self.model)
        out["glitches"] = [asdict(g) for g in self.glitches]
        out["signals"] = list(self.signals)
        out["ratios"] = list(self.ratios)
        out["seeds"] = list(self.seeds)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        if "model" not in raw or "name" not in raw:
            raise ValidationError("config needs 'name' and 'model'")
        raw["model"] = ModelConfig(**raw["model"])
        raw["glitches"] = tuple(GlitchSpec(**g) for g in raw.get("glitches", ()))
        return cls(**raw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class StageResult:
    stage: str
    status: str
    directory: Path
    files: tuple


def run_pipeline(config: ExperimentConfig, out_dir: str | Path, force: bool = False) -> list[StageResult]:
    """Execute (or skip) every stage; returns one StageResult per stage."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = stage_hashes(config)
    results = []
    for stage in STAGES:
        stage_dir = out_dir / stage
        expected = hashes[stage]
        if not force and _manifest_matches(stage_dir, expected):
            _verify_stage_files(stage_dir)
            manifest = _read_manifest(stage_dir)
            results.append(
                StageResult(stage, "skipped", stage_dir, tuple(sorted(manifest["files"])))
            )
            continue
        stage_dir.mkdir(parents=True, exist_ok=True)
        try:
            files = _STAGE_RUNNERS[stage](config, out_dir, stage_dir)
        except Exception as exc:  # halt with stage name; partial artifacts stay on disk
            raise StageError(stage, exc) from exc
        upstream = hashes[STAGES[STAGES.index(stage) - 1]] if stage != STAGES[0] else ""
        _write_manifest(stage_dir, stage, expected, upstream, files)
        results.append(StageResult(stage, "completed", stage_dir, tuple(sorted(files))))
    return results


def stage_hashes(config: ExperimentConfig) -> dict[str, str]:
    """Chained content hashes, one per stage; pure function of the config."""
    cfg = config.to_dict()
    params = {
        "data": {
            "source": {"csv": cfg["csv"], "label_column": cfg["label_column"], "blobs": cfg["blobs"]},
            "subsample_fraction": cfg["subsample_fraction"],
            "subsample_before_split": cfg["subsample_before_split"],
            "train_fraction": cfg["train_fraction"],
            "seed": cfg["seed"],
        },
        "inject": {"glitches": cfg["glitches"]},
        "train": {"model": cfg["model"]},
        "influence": {"mode": cfg["influence_mode"]},
        "signals": {"signals": cfg["signals"], "per_epoch": cfg["per_epoch"]},
        "evaluate": {"name": cfg["name"], "per_epoch": cfg["per_epoch"], "seed": cfg["seed"]},
    }
    hashes: dict[str, str] = {}
    upstream = ""
    for stage in STAGES:
        upstream = _hash_obj({"stage": stage, "params": params[stage], "upstream": upstream})
        hashes[stage] = upstream
    return hashes


def sweep_plan(config: ExperimentConfig) -> ExperimentPlan:
    """Materialize the in-memory plan that sweep cells re-run per (ratio, seed)."""
    if len(config.glitches) != 1:
        raise ValidationError("sweep needs exactly one glitch spec")
    base = _load_base(config)
    spec = config.glitches[0]
    return ExperimentPlan(
        dataset_name=config.name,
        base=base,
        glitch=spec,
        model=config.model,
        foreign=_load_foreign(spec),
        signals=config.signals,
        mode=config.influence_mode,
        subsample_fraction=config.subsample_fraction,
        train_fraction=config.train_fraction,
        subsample_before_split=config.subsample_before_split,
    )


def run_sweep(config: ExperimentConfig, out_dir: str | Path, workers: int | None = None) -> Path:
    """Sweep glitch ratios; writes sweep.csv, sweep_summary.csv, and figures."""
    if not config.ratios:
        raise ValidationError("sweep needs a non-empty 'ratios' list")
    if not config.seeds:
        raise ValidationError("sweep needs a non-empty 'seeds' list")
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = sweep_plan(config)
    rows_path = out_dir / "sweep.csv"
    collected: list[dict] = []

    def _stream():
        for row in ratio_sweep(plan, config.ratios, config.seeds, workers=workers):
            collected.append(row)
            yield row

    write_rows_csv(rows_path, _stream(), SWEEP_COLUMNS)
    summary = summarize_sweep(collected)
    write_rows_csv(
        out_dir / "sweep_summary.csv",
        summary,
        ("glitch_type", "ratio", "signal", "epoch_scope", "mean_f1", "runs"),
    )
    plot_ratio_sweep(summary, out_dir / "figures")
    return rows_path


# --- stage implementations ------------------------------------------------


def _stage_data(config: ExperimentConfig, out_dir: Path, stage_dir: Path) -> dict[str, str]:
    base = _load_base(config)
    base.to_csv(stage_dir / "dataset.csv")
    files = ["dataset.csv"]
    data = base
    if config.subsample_before_split and config.subsample_fraction is not None:
        data = stratified_subsample(data, config.subsample_fraction, stage_seed(config.seed, 0))
        data.to_csv(stage_dir / "subsampled.csv")
        files.append("subsampled.csv")
    split = stratified_split(data, config.train_fraction, stage_seed(config.seed, 1))
    train_set, validation = split.train, split.validation
    if not config.subsample_before_split and config.subsample_fraction is not None:
        train_set = stratified_subsample(train_set, config.subsample_fraction, stage_seed(config.seed, 0))
        validation = stratified_subsample(validation, config.subsample_fraction, stage_seed(config.seed, 2))
    train_set.to_csv(stage_dir / "train.csv")
    validation.to_csv(stage_dir / "validation.csv")
    return _hash_files(stage_dir, files + ["train.csv", "validation.csv"])


def _stage_inject(config: ExperimentConfig, out_dir: Path, stage_dir: Path) -> dict[str, str]:
    train_set = _read_dataset(out_dir / "data", "train.csv")
    validation = _read_dataset(out_dir / "data", "validation.csv")
    id_floor = int(max(train_set.sample_ids.max(), validation.sample_ids.max())) + 1
    table = None
    for spec in config.glitches:
        foreign = _load_foreign(spec)
        train_set, new_table = apply_glitch(train_set, spec, foreign=foreign, id_floor=id_floor)
        table = new_table if table is None else _merge_tables(table, new_table)
    train_set.to_csv(stage_dir / "train_glitched.csv")
    table.to_csv(stage_dir / "error_table.csv")
    return _hash_files(stage_dir, ["train_glitched.csv", "error_table.csv"])


def _stage_train(config: ExperimentConfig, out_dir: Path, stage_dir: Path) -> dict[str, str]:
    glitched = _read_dataset(out_dir / "inject", "train_glitched.csv")
    trail = train_model(glitched, config.model)
    trail.to_file(stage_dir / "trail.bin")
    return _hash_files(stage_dir, ["trail.bin"])


def _stage_influence(config: ExperimentConfig, out_dir: Path, stage_dir: Path) -> dict[str, str]:
    glitched = _read_dataset(out_dir / "inject", "train_glitched.csv")
    validation = _read_dataset(out_dir / "data", "validation.csv")
    _verify_file(out_dir / "train", "trail.bin")
    trail = CheckpointTrail.from_file(out_dir / "train" / "trail.bin")
    tensor = tracin(trail, glitched, validation, config.influence_mode)
    tensor.to_file(stage_dir / "influence.bin")
    export_cumulative_csv(tensor, stage_dir / "influence_cumulative.csv")
    export_self_csv(tensor, stage_dir / "influence_self.csv")
    return _hash_files(
        stage_dir, ["influence.bin", "influence_cumulative.csv", "influence_self.csv"]
    )


def _stage_signals(config: ExperimentConfig, out_dir: Path, stage_dir: Path) -> dict[str, str]:
    glitched = _read_dataset(out_dir / "inject", "train_glitched.csv")
    validation = _read_dataset(out_dir / "data", "validation.csv")
    _verify_file(out_dir / "influence", "influence.bin")
    tensor = InfluenceTensor.from_file(out_dir / "influence" / "influence.bin")
    rankings = []
    for name in config.signals:
        scopes: list[int | None] = [None]
        if config.per_epoch:
            scopes += list(range(tensor.num_epochs))
        for epoch in scopes:
            rankings.append(
                compute_signal(name, tensor, glitched.labels, validation.labels, epoch)
            )
    rankings_to_csv(rankings, stage_dir / "rankings.csv")
    return _hash_files(stage_dir, ["rankings.csv"])


def _stage_evaluate(config: ExperimentConfig, out_dir: Path, stage_dir: Path) -> dict[str, str]:
    _verify_file(out_dir / "signals", "rankings.csv")
    _verify_file(out_dir / "inject", "error_table.csv")
    rankings = rankings_from_csv(out_dir / "signals" / "rankings.csv")
    truth = ErrorTable.from_csv(out_dir / "inject" / "error_table.csv")
    rows = []
    order = {name: i for i, name in enumerate(SIGNALS)}
    rankings.sort(key=lambda r: (order.get(r.signal, 99), -1 if r.epoch is None else r.epoch))
    for ranking in rankings:
        result = f1_at_known_ratio(ranking, truth, seed=config.seed)
        rows.append(
            {
                "dataset": config.name,
                "model": config.model.architecture,
                "glitch_type": result.glitch_type,
                "ratio": result.glitch_ratio,
                "seed": config.seed,
                "signal": result.signal,
                "epoch_scope": result.epoch_scope,
                "f1": result.f1,
            }
        )
    write_rows_csv(stage_dir / "results.csv", rows, RESULT_COLUMNS)
    figures_dir = stage_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    files = ["results.csv", "figures/f1_by_signal.png"]
    plot_f1_bars(rows, figures_dir / "f1_by_signal.png", title=config.name)
    if config.per_epoch:
        plot_per_epoch_f1(rows, figures_dir / "f1_per_epoch.png", title=config.name)
        files.append("figures/f1_per_epoch.png")
    return _hash_files(stage_dir, files)


_STAGE_RUNNERS = {
    "data": _stage_data,
    "inject": _stage_inject,
    "train": _stage_train,
    "influence": _stage_influence,
    "signals": _stage_signals,
    "evaluate": _stage_evaluate,
}


# --- helpers ----------------------------------------------------------------


def _load_base(config: ExperimentConfig) -> Dataset:
    if config.csv is not None:
        return load_csv(config.csv, config.label_column)
    return make_blobs(**config.blobs)


def _load_foreign(spec: GlitchSpec) -> Dataset | None:
    """Resolve a far_ca spec's foreign cluster (persisted CSV or blobs)."""
    if spec.glitch_type != GLITCH_FAR_CA:
        return None
    if (spec.foreign_csv is None) == (spec.foreign_blobs is None):
        raise ValidationError("far_ca needs exactly one of foreign_csv or foreign_blobs")
    if spec.foreign_csv is not None:
        foreign = Dataset.from_csv(spec.foreign_csv)
    else:
        foreign = make_blobs(**spec.foreign_blobs)
    if spec.foreign_scale != 1.0 or spec.foreign_offset != 0.0:
        foreign = Dataset(
            foreign.features * spec.foreign_scale + spec.foreign_offset,
            foreign.labels,
            foreign.sample_ids,
            foreign.class_count,
        )
    return foreign


def _merge_tables(first: ErrorTable, second: ErrorTable) -> ErrorTable:
    """Chaining semantics: a sample keeps the first glitch annotation it got.

    The merged table covers the second (current) sample set, so rows removed
    by a later injector drop out and appended rows come in.
    """
    kinds_by_id = dict(zip(first.sample_ids.tolist(), first.glitch_types.tolist()))
    originals_by_id = dict(zip(first.sample_ids.tolist(), first.original_labels.tolist()))
    kinds = []
    originals = []
    for sid, kind, original in zip(
        second.sample_ids.tolist(), second.glitch_types.tolist(), second.original_labels.tolist()
    ):
        previous = kinds_by_id.get(sid, "clean")
        if previous != "clean":
            kinds.append(previous)
            originals.append(originals_by_id[sid])
        else:
            kinds.append(kind)
            originals.append(original)
    return ErrorTable(
        second.sample_ids,
        np.array(kinds, dtype=np.str_),
        np.array(originals, dtype=np.int64),
    )


def _hash_obj(obj) -> str:
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_files(stage_dir: Path, names: list[str]) -> dict[str, str]:
    return {name: _hash_file(stage_dir / name) for name in names}


def _write_manifest(
    stage_dir: Path, stage: str, config_hash: str, upstream_hash: str, files: dict[str, str]
) -> None:
    manifest = {
        "stage": stage,
        "config_hash": config_hash,
        "upstream_hash": upstream_hash,
        "files": files,
    }
    (stage_dir / _MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _read_manifest(stage_dir: Path) -> dict:
    return json.loads((stage_dir / _MANIFEST).read_text(encoding="utf-8"))


def _manifest_matches(stage_dir: Path, expected_hash: str) -> bool:
    path = stage_dir / _MANIFEST
    if not path.exists():
        return False
    manifest = _read_manifest(stage_dir)
    if manifest.get("config_hash") != expected_hash:
        return False
    return all((stage_dir / name).exists() for name in manifest.get("files", {}))


def _verify_stage_files(stage_dir: Path) -> None:
    manifest = _read_manifest(stage_dir)
    for name, digest in manifest["files"].items():
        if _hash_file(stage_dir / name) != digest:
            raise ChainIntegrityError(
                f"{stage_dir / name} was modified after its manifest was written"
            )


def _verify_file(stage_dir: Path, name: str) -> None:
    """Check one upstream artifact against its manifest before consuming it."""
    path = stage_dir / _MANIFEST
    if not path.exists():
        raise ChainIntegrityError(f"{stage_dir} has no manifest; run upstream stages first")
    manifest = _read_manifest(stage_dir)
    if name not in manifest["files"]:
        raise ChainIntegrityError(f"{stage_dir / name} is not recorded in the stage manifest")
    if _hash_file(stage_dir / name) != manifest["files"][name]:
        raise ChainIntegrityError(f"{stage_dir / name} was modified after its manifest was written")


def _read_dataset(stage_dir: Path, name: str) -> Dataset:
    _verify_file(stage_dir, name)
    return Dataset.from_csv(stage_dir / name)
