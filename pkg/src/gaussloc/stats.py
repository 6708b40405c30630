"""Seed streams, binomial intervals and a small parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import stats as _st

WORKERS_ENV = "LAB_WORKERS"


def trial_rng(root_seed: int, index: int) -> np.random.Generator:
    """Generator for trial ``index``: ``SeedSequence(root_seed, spawn_key=(index,))``."""
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=(int(index),)))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def map_trials(fn: Callable[[int], object], indices: Iterable[int], workers: int | None = None) -> list:
    """Apply ``fn`` to trial indices; results come back in index order regardless of workers."""
    idx = sorted(int(i) for i in indices)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(idx) < 2:
        return [fn(i) for i in idx]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, idx))


@dataclass(frozen=True)
class ProportionEstimate:
    successes: int
    trials: int
    p: float
    low: float
    high: float
    stderr: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> ProportionEstimate:
    if trials <= 0:
        raise ValueError("need at least one trial")
    if not 0 <= successes <= trials:
        raise ValueError("successes out of range")
    z = float(_st.norm.ppf(0.5 + confidence / 2))
    p = successes / trials
    denom = 1 + z * z / trials
    mid = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials**2)) / denom
    return ProportionEstimate(
        successes, trials, p, max(0.0, mid - half), min(1.0, mid + half),
        float(np.sqrt(p * (1 - p) / trials)),
    )
