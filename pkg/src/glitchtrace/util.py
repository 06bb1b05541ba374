"""Small shared helpers: deterministic rounding, RNG construction, float formatting.

Every seeded operation in the package builds its generator through
:func:`rng_from_seed`, so one RNG algorithm (PCG64) backs the whole toolkit
and a given (operation, seed) pair is reproducible across runs and platforms.
"""

from __future__ import annotations

import math

import numpy as np


def rng_from_seed(seed: int) -> np.random.Generator:
    """Return the package-wide RNG (PCG64) seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def stage_seed(seed: int, stage: int) -> int:
    """Derive a per-stage seed from a run seed via SeedSequence.

    Keeps the streams of pipeline stages (subsample, split, inject, train)
    decoupled while staying a pure function of (seed, stage).
    """
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from zero toward +inf.

    Python's built-in ``round`` uses banker's rounding; sample-count
    arithmetic needs one fixed convention so counts are reproducible.
    """
    return int(math.floor(x + 0.5))


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, used for all CSV float output."""
    return repr(float(x))
