"""glitchtrace: plant data glitches, trace training influence, rank to detect.

The package is organized around the stages of one experiment:

* :mod:`glitchtrace.data` — datasets, ingestion, synthesis, stratified splits
* :mod:`glitchtrace.glitches` — contamination mechanisms + ground-truth tables
* :mod:`glitchtrace.models` — SGD classifiers recording checkpoint trails
* :mod:`glitchtrace.influence` — per-epoch and cumulative influence tensors
* :mod:`glitchtrace.signals` — per-sample detection signals and rankings
* :mod:`glitchtrace.evaluation` — top-k F1 protocol, sweeps, LOOR oracle
* :mod:`glitchtrace.pipeline` — staged, cached experiment driver
* :mod:`glitchtrace.report` — matplotlib figure rendering
"""

__version__ = "0.1.0"

from .data import Dataset, SplitPair, load_csv, make_blobs, stratified_split, stratified_subsample
from .errors import ChainIntegrityError, StageError, TrainingDivergenceError, ValidationError
from .evaluation import (
    DetectionResult,
    ExperimentArtifacts,
    ExperimentPlan,
    LoorRecord,
    f1_at_known_ratio,
    f1_at_percentile,
    loor_oracle,
    per_epoch_detection,
    ratio_sweep,
    run_experiment,
    summarize_sweep,
)
from .glitches import (
    ErrorTable,
    GlitchSpec,
    apply_glitch,
    inject_class_dependent_noise,
    inject_far_ca,
    inject_near_ca,
    inject_outliers,
    inject_uniform_noise,
)
from .influence import InfluenceTensor, epoch_influence, tracin
from .models import (
    Checkpoint,
    CheckpointTrail,
    ModelConfig,
    evaluate_accuracy,
    last_layer_gradient,
    last_layer_gradients,
    replay_trail,
    train,
    with_scaled_learning_rates,
)
from .pipeline import ExperimentConfig, run_pipeline, run_sweep
from .signals import (
    SIGNALS,
    SignalRanking,
    average_absolute_influence,
    compute_signal,
    gd_class,
    marginal_influence,
    rank,
    self_influence,
)

__all__ = [
    "__version__",
    "Dataset",
    "SplitPair",
    "load_csv",
    "make_blobs",
    "stratified_split",
    "stratified_subsample",
    "ValidationError",
    "TrainingDivergenceError",
    "ChainIntegrityError",
    "StageError",
    "ErrorTable",
    "GlitchSpec",
    "apply_glitch",
    "inject_uniform_noise",
    "inject_class_dependent_noise",
    "inject_near_ca",
    "inject_far_ca",
    "inject_outliers",
    "ModelConfig",
    "Checkpoint",
    "CheckpointTrail",
    "train",
    "replay_trail",
    "with_scaled_learning_rates",
    "last_layer_gradient",
    "last_layer_gradients",
    "evaluate_accuracy",
    "InfluenceTensor",
    "epoch_influence",
    "tracin",
    "SIGNALS",
    "SignalRanking",
    "self_influence",
    "marginal_influence",
    "average_absolute_influence",
    "gd_class",
    "rank",
    "compute_signal",
    "DetectionResult",
    "LoorRecord",
    "ExperimentArtifacts",
    "ExperimentPlan",
    "f1_at_known_ratio",
    "f1_at_percentile",
    "per_epoch_detection",
    "ratio_sweep",
    "run_experiment",
    "summarize_sweep",
    "loor_oracle",
    "ExperimentConfig",
    "run_pipeline",
    "run_sweep",
]
