"""Seeded random search over the MLP hyperparameter space.

One sample draws the hidden-layer count uniformly, the first-layer width and
the learning rate log-uniformly. Each trial trains a model and scores it on
the dev split: accuracy for classification (higher wins), MAE for regression
(lower wins). A JSONL trial log makes interrupted searches resumable.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AllTrialsDiverged, NonFiniteLoss
from .net import (
    FIRST_UNITS_RANGE,
    LEARNING_RATE_RANGE,
    N_HIDDEN_RANGE,
    LossKind,
    MLPConfig,
    predict_proba,
    train,
)
from .seeds import derive_seed


@dataclass(frozen=True)
class SearchSpace:
    n_hidden: tuple[int, int] = N_HIDDEN_RANGE
    first_units: tuple[int, int] = FIRST_UNITS_RANGE
    learning_rate: tuple[float, float] = LEARNING_RATE_RANGE
    n_samples: int = 20

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class TrialResult:
    config: MLPConfig
    dev_metric: float | None  # None when the trial diverged
    diverged: bool
    train_seconds: float
    trial_index: int

    def to_json(self) -> dict:
        return {
            "trial_index": self.trial_index,
            "config": self.config.to_json(),
            "dev_metric": self.dev_metric,
            "diverged": self.diverged,
            "train_seconds": self.train_seconds,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrialResult":
        return cls(
            config=MLPConfig.from_json(obj["config"]),
            dev_metric=obj["dev_metric"],
            diverged=bool(obj["diverged"]),
            train_seconds=float(obj["train_seconds"]),
            trial_index=int(obj["trial_index"]),
        )


def sample(space: SearchSpace, seed: int, i: int, loss: LossKind = LossKind.BINARY_NLL) -> MLPConfig:
    """Deterministic i-th draw from the space under the given seed."""
    rng = np.random.default_rng(derive_seed(seed, "trial", i))
    n_lo, n_hi = space.n_hidden
    n_hidden = int(rng.integers(n_lo, n_hi + 1))
    u_lo, u_hi = space.first_units
    units = int(round(np.exp(rng.uniform(np.log(u_lo), np.log(u_hi)))))
    units = min(max(units, u_lo), u_hi)
    a_lo, a_hi = space.learning_rate
    learning_rate = float(np.exp(rng.uniform(np.log(a_lo), np.log(a_hi))))
    return MLPConfig(
        n_hidden=n_hidden,
        first_units=units,
        learning_rate=learning_rate,
        loss=loss,
        seed=derive_seed(seed, "init", i),
    )


def _dev_metric(loss: LossKind, probs: np.ndarray, y_dev: np.ndarray) -> float:
    if loss is LossKind.MAE:
        return float(np.mean(np.abs(probs - y_dev)))
    return float(np.mean((probs >= 0.5) == (y_dev >= 0.5)))


def _better(loss: LossKind, a: float, b: float) -> bool:
    return a < b if loss is LossKind.MAE else a > b


def select_best(trials: list[TrialResult], loss: LossKind) -> TrialResult:
    """Best finite trial; exact ties go to the lower trial index."""
    best: TrialResult | None = None
    for result in sorted(trials, key=lambda r: r.trial_index):
        if result.diverged or result.dev_metric is None:
            continue
        if best is None or _better(loss, result.dev_metric, best.dev_metric):
            best = result
    if best is None:
        raise AllTrialsDiverged(f"all {len(trials)} trials diverged")
    return best


@dataclass
class TuneOutcome:
    best_config: MLPConfig
    trials: list[TrialResult]
    n_executed: int  # trials actually trained in this call (0 = fully resumed)


def tune(
    space: SearchSpace,
    seed: int,
    X_train,
    y_train,
    X_dev,
    y_dev,
    loss: LossKind,
    *,
    train_overrides: dict | None = None,
    log_path: str | Path | None = None,
    n_jobs: int = 1,
) -> TuneOutcome:
    """Run the random search and pick the best dev configuration.

    Diverged trials are recorded but excluded from selection; exact metric
    ties go to the lower trial index. With a log_path, completed trials are
    skipped on rerun.
    """
    done: dict[int, TrialResult] = {}
    log_file = Path(log_path) if log_path is not None else None
    if log_file is not None and log_file.exists():
        with open(log_file, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    result = TrialResult.from_json(json.loads(line))
                    done[result.trial_index] = result

    lock = threading.Lock()

    def run_trial(i: int) -> TrialResult:
        config = sample(space, seed, i, loss)
        if train_overrides:
            config = replace(config, **train_overrides)
        start = time.perf_counter()
        try:
            model = train(config, X_train, y_train, X_dev, y_dev)
            metric = _dev_metric(loss, predict_proba(model, np.asarray(X_dev, dtype=np.float64)), np.asarray(y_dev, dtype=np.float64))
            result = TrialResult(config, metric, False, time.perf_counter() - start, i)
        except NonFiniteLoss:
            result = TrialResult(config, None, True, time.perf_counter() - start, i)
        if log_file is not None:
            with lock:
                log_file.parent.mkdir(parents=True, exist_ok=True)
                with open(log_file, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(result.to_json()) + "\n")
        return result

    pending = [i for i in range(space.n_samples) if i not in done]
    if pending:
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                for result in pool.map(run_trial, pending):
                    done[result.trial_index] = result
        else:
            for i in pending:
                done[i] = run_trial(i)

    trials = [done[i] for i in sorted(done)]
    best = select_best(trials, loss)
    return TuneOutcome(best_config=best.config, trials=trials, n_executed=len(pending))
