"""Command-line interface.

Each subcommand is a thin wrapper over one library operation; ``run`` and
``sweep`` drive the staged pipeline from a JSON config. Exit codes: 0 on
success, 1 on validation errors (bad flags, bad config, infeasible
parameters), 2 on runtime failures.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__
from .data import Dataset, load_csv, make_blobs, stratified_split, stratified_subsample
from .errors import StageError, ValidationError
from .evaluation import (
    RESULT_COLUMNS,
    f1_at_known_ratio,
    read_rows_csv,
    summarize_sweep,
    write_rows_csv,
)
from .glitches import CORRUPTIONS, GLITCH_TYPES, ErrorTable, GlitchSpec, apply_glitch
from .influence import MODES, InfluenceTensor, export_cumulative_csv, export_self_csv, tracin
from .models import ARCHITECTURES, CheckpointTrail, ModelConfig, evaluate_accuracy
from .models import train as train_model
from .pipeline import ExperimentConfig, run_pipeline, run_sweep
from .report import plot_f1_bars, plot_per_epoch_f1, plot_ratio_sweep
from .signals import SIGNALS, compute_signal, rankings_from_csv, rankings_to_csv


@click.group(name="glitchtrace")
@click.version_option(version=__version__, prog_name="glitchtrace")
def cli():
    """Inject data glitches, trace influence, rank and evaluate detection."""


@cli.command()
@click.option("--n", type=int, required=True, help="Total sample count.")
@click.option("--d", type=int, required=True, help="Feature dimensionality.")
@click.option("--k", type=int, required=True, help="Number of classes.")
@click.option("--separation", type=float, required=True, help="Minimum center distance.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Dataset CSV to write.")
def generate(n, d, k, separation, seed, out):
    """Synthesize a Gaussian-blob dataset and persist it."""
    data = make_blobs(n=n, d=d, k=k, separation=separation, seed=seed)
    data.to_csv(out)
    click.echo(f"wrote {out} (n={data.n}, d={data.d}, k={data.class_count})")


@cli.command()
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), required=True)
@click.option("--label-column", required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def ingest(csv_path, label_column, out):
    """Standardize a raw CSV into the persisted dataset format."""
    data = load_csv(csv_path, label_column)
    data.to_csv(out)
    click.echo(f"wrote {out} (n={data.n}, d={data.d}, k={data.class_count})")


@cli.command()
@click.option("--in", "in_path", type=click.Path(path_type=Path), required=True)
@click.option("--fraction", type=float, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def subsample(in_path, fraction, seed, out):
    """Stratified subsample of a persisted dataset."""
    data = stratified_subsample(Dataset.from_csv(in_path), fraction, seed)
    data.to_csv(out)
    click.echo(f"wrote {out} (n={data.n})")


@cli.command()
@click.option("--in", "in_path", type=click.Path(path_type=Path), required=True)
@click.option("--train-fraction", type=float, default=0.8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory.")
def split(in_path, train_fraction, seed, out):
    """Stratified train/validation split of a persisted dataset."""
    pair = stratified_split(Dataset.from_csv(in_path), train_fraction, seed)
    out.mkdir(parents=True, exist_ok=True)
    pair.train.to_csv(out / "train.csv")
    pair.validation.to_csv(out / "validation.csv")
    click.echo(f"wrote {out}/train.csv (n={pair.train.n}) and validation.csv (n={pair.validation.n})")


@cli.command()
@click.option("--in", "in_path", type=click.Path(path_type=Path), required=True, help="Training dataset CSV.")
@click.option("--glitch", type=click.Choice(GLITCH_TYPES), required=True)
@click.option("--epsilon", type=float, required=True, help="Flip probability or target glitch ratio.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--source-class", type=int, default=None, help="Source/victim class (auto when omitted).")
@click.option("--target-class", type=int, default=None)
@click.option("--corruption", type=click.Choice(CORRUPTIONS), default=None)
@click.option("--magnitude", type=float, default=0.0, help="Corruption magnitude (standardized units).")
@click.option("--foreign", type=click.Path(path_type=Path), default=None, help="Foreign dataset CSV for far_ca.")
@click.option("--foreign-class", type=int, default=0, show_default=True)
@click.option("--id-floor", type=int, default=0, show_default=True, help="Minimum fresh id for appended samples.")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory.")
def inject(in_path, glitch, epsilon, seed, source_class, target_class, corruption, magnitude,
           foreign, foreign_class, id_floor, out):
    """Apply one contamination mechanism; writes the glitched set + error table."""
    spec = GlitchSpec(
        glitch_type=glitch,
        epsilon=epsilon,
        seed=seed,
        source_class=source_class,
        target_class=target_class,
        corruption=corruption,
        corruption_magnitude=magnitude,
        foreign_class=foreign_class,
    )
    foreign_data = Dataset.from_csv(foreign) if foreign is not None else None
    train_set = Dataset.from_csv(in_path)
    glitched, table = apply_glitch(train_set, spec, foreign=foreign_data, id_floor=id_floor)
    out.mkdir(parents=True, exist_ok=True)
    glitched.to_csv(out / "train_glitched.csv")
    table.to_csv(out / "error_table.csv")
    click.echo(f"wrote {out}/train_glitched.csv and error_table.csv ({table.glitch_count} glitched)")


@cli.command()
@click.option("--in", "in_path", type=click.Path(path_type=Path), required=True, help="Training dataset CSV.")
@click.option("--arch", type=click.Choice(ARCHITECTURES), default="logistic", show_default=True)
@click.option("--hidden-units", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--lr-decay", type=float, default=1.0, show_default=True)
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Trail file to write.")
def train(in_path, arch, hidden_units, lr, lr_decay, epochs, batch_size, seed, out):
    """Train a classifier with per-epoch checkpoints; writes the trail container."""
    data = Dataset.from_csv(in_path)
    config = ModelConfig(
        architecture=arch,
        hidden_units=hidden_units,
        learning_rate=lr,
        lr_decay=lr_decay,
        epochs=epochs,
        batch_size=min(batch_size, data.n),
        seed=seed,
    )
    trail = train_model(data, config)
    trail.to_file(out)
    acc = evaluate_accuracy(trail, data)
    click.echo(f"wrote {out} (T={trail.num_epochs}, train accuracy {acc:.3f})")


@cli.command()
@click.option("--trail", type=click.Path(path_type=Path), required=True)
@click.option("--train", "train_path", type=click.Path(path_type=Path), required=True)
@click.option("--validation", type=click.Path(path_type=Path), required=True)
@click.option("--mode", type=click.Choice(MODES), default="paper", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory.")
def influence(trail, train_path, validation, mode, out):
    """Compute the influence tensor from a trail; writes binary + CSV exports."""
    trail_obj = CheckpointTrail.from_file(trail)
    train_set = Dataset.from_csv(train_path)
    val_set = Dataset.from_csv(validation)
    tensor = tracin(trail_obj, train_set, val_set, mode)
    out.mkdir(parents=True, exist_ok=True)
    tensor.to_file(out / "influence.bin")
    export_cumulative_csv(tensor, out / "influence_cumulative.csv")
    export_self_csv(tensor, out / "influence_self.csv")
    click.echo(f"wrote {out}/influence.bin (T={tensor.num_epochs}, n={tensor.n_train}, m={tensor.n_val})")


@cli.command()
@click.option("--influence", "influence_path", type=click.Path(path_type=Path), required=True)
@click.option("--train", "train_path", type=click.Path(path_type=Path), required=True)
@click.option("--validation", type=click.Path(path_type=Path), required=True)
@click.option("--signal", "chosen", type=click.Choice(SIGNALS + ("all",)), default="all", show_default=True)
@click.option("--per-epoch/--no-per-epoch", default=False, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Rankings CSV to write.")
def signals(influence_path, train_path, validation, chosen, per_epoch, out):
    """Aggregate an influence tensor into signal rankings."""
    tensor = InfluenceTensor.from_file(influence_path)
    train_set = Dataset.from_csv(train_path)
    val_set = Dataset.from_csv(validation)
    names = SIGNALS if chosen == "all" else (chosen,)
    rankings = []
    for name in names:
        scopes = [None] + (list(range(tensor.num_epochs)) if per_epoch else [])
        for epoch in scopes:
            rankings.append(compute_signal(name, tensor, train_set.labels, val_set.labels, epoch))
    rankings_to_csv(rankings, out)
    click.echo(f"wrote {out} ({len(rankings)} rankings)")


@cli.command()
@click.option("--rankings", type=click.Path(path_type=Path), required=True)
@click.option("--error-table", type=click.Path(path_type=Path), required=True)
@click.option("--dataset-name", default="dataset", show_default=True)
@click.option("--model-name", default="model", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory.")
def evaluate(rankings, error_table, dataset_name, model_name, seed, out):
    """Score rankings against the error table; writes results.csv + figures."""
    ranking_list = rankings_from_csv(rankings)
    truth = ErrorTable.from_csv(error_table)
    order = {name: i for i, name in enumerate(SIGNALS)}
    ranking_list.sort(key=lambda r: (order.get(r.signal, 99), -1 if r.epoch is None else r.epoch))
    rows = []
    for ranking in ranking_list:
        result = f1_at_known_ratio(ranking, truth, seed=seed)
        rows.append(
            {
                "dataset": dataset_name,
                "model": model_name,
                "glitch_type": result.glitch_type,
                "ratio": result.glitch_ratio,
                "seed": seed,
                "signal": result.signal,
                "epoch_scope": result.epoch_scope,
                "f1": result.f1,
            }
        )
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(out / "results.csv", rows, RESULT_COLUMNS)
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    plot_f1_bars(rows, figures / "f1_by_signal.png", title=dataset_name)
    if any(r["epoch_scope"] != "cumulative" for r in rows):
        plot_per_epoch_f1(rows, figures / "f1_per_epoch.png", title=dataset_name)
    for row in rows:
        click.echo(f"{row['signal']:<28} {row['epoch_scope']:<12} f1={row['f1']:.4f}")
    click.echo(f"wrote {out}/results.csv")


@cli.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory.")
@click.option("--force", is_flag=True, help="Recompute every stage, ignoring caches.")
def run(config_path, out, force):
    """Run the full staged pipeline from a JSON experiment config."""
    config = ExperimentConfig.from_file(config_path)
    results = run_pipeline(config, out, force=force)
    for stage in results:
        click.echo(f"stage {stage.stage:<10} {stage.status:<10} -> {stage.directory}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output directory.")
@click.option("--workers", type=int, default=None, help="Worker processes (default: GLITCHTRACE_WORKERS env var or 1).")
def sweep(config_path, out, workers):
    """Sweep glitch ratios x seeds; writes sweep.csv, summary, and figures."""
    config = ExperimentConfig.from_file(config_path)
    rows_path = run_sweep(config, out, workers=workers)
    click.echo(f"wrote {rows_path} and {Path(out) / 'sweep_summary.csv'}")


@cli.command()
@click.option("--results", "results_path", type=click.Path(path_type=Path), required=True,
              help="results.csv, sweep.csv, or sweep_summary.csv")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Figure output directory.")
def report(results_path, out):
    """Re-render figures from previously written delimited output."""
    rows = read_rows_csv(results_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if rows and "mean_f1" in rows[0]:
        written += plot_ratio_sweep(rows, out)
    elif rows and "ratio" in rows[0] and len({(r["ratio"], r["seed"]) for r in rows}) > 1:
        written += plot_ratio_sweep(summarize_sweep(rows), out)
    else:
        written.append(plot_f1_bars(rows, out / "f1_by_signal.png"))
        if any(r["epoch_scope"] != "cumulative" for r in rows):
            written.append(plot_per_epoch_f1(rows, out / "f1_per_epoch.png"))
    for path in written:
        click.echo(f"wrote {path}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 2
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        return 1
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1 if isinstance(exc.cause, ValidationError) else 2
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # runtime failure
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 2
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
