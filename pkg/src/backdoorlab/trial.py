"""Poison-fraction sweep comparing vanilla and PGD-adversarial training.

For each alpha and each training regime the driver trains a linear
softmax model on the injected training set and reports five metrics:
0-1 and PGD-estimated robust loss on a shared seeded subsample of the
training and test sets, plus the backdoor success rate on watermarked
test images whose true label differs from the target.  PGD only lower
bounds the true robust loss; outputs are labeled accordingly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rng
from .errors import ConfigError
from .learner import (SoftmaxModel, TrainConfig, pgd_adversarial_training,
                      pgd_attack_batch, vanilla_training)
from .mnistio import ImageDataset, apply_image_patch, inject_backdoor

CSV_HEADER = ["alpha", "regime", "train01", "trainRobust", "test01",
              "testRobust", "backdoorSuccess"]


class Regime(Enum):
    VANILLA = "vanilla"
    PGD_AT = "pgd-at"


@dataclass(frozen=True)
class TrialRow:
    alpha: float
    regime: Regime
    train_binary_loss: float
    train_robust_loss: float
    test_binary_loss: float
    test_robust_loss: float
    backdoor_success_rate: float

    def __post_init__(self):
        for name in ("train_binary_loss", "train_robust_loss",
                     "test_binary_loss", "test_robust_loss",
                     "backdoor_success_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v}")

    def as_csv(self) -> list:
        return [repr(self.alpha), self.regime.value,
                repr(self.train_binary_loss), repr(self.train_robust_loss),
                repr(self.test_binary_loss), repr(self.test_robust_loss),
                repr(self.backdoor_success_rate)]


def pgd_estimated_losses(model: SoftmaxModel, images: np.ndarray,
                         labels: np.ndarray, cfg: TrainConfig,
                         sample_size: int, seed: int) -> tuple[float, float]:
    """(0-1 loss, PGD-estimated robust loss) on one seeded subsample."""
    n = images.shape[0]
    take = min(sample_size, n)
    idx = rng.generator(seed, 21).choice(n, size=take, replace=False)
    X, y = images[idx], labels[idx]
    fail_clean = model.predict(X) != y
    adv = pgd_attack_batch(model, X, y, cfg.pgd, seed=rng.generator(seed, 22).integers(1 << 62))
    # the identity perturbation is always admissible, so a clean miss is a robust miss
    fail_robust = fail_clean | (model.predict(adv) != y)
    return float(np.mean(fail_clean)), float(np.mean(fail_robust))


def backdoor_success(model: SoftmaxModel, test: ImageDataset, t: int,
                     amplitude: float) -> float:
    """Fraction of watermarked non-target test images classified as the target."""
    victims = np.flatnonzero(test.labels != t)
    stamped = apply_image_patch(test.images[victims], amplitude)
    return float(np.mean(model.predict(stamped) == t))


def _train(regime: Regime, data: ImageDataset, cfg: TrainConfig) -> SoftmaxModel:
    labeled = data.to_labeled()
    if regime is Regime.VANILLA:
        return vanilla_training(labeled, cfg)
    return pgd_adversarial_training(labeled, cfg)


def _one_row(train: ImageDataset, test: ImageDataset, t: int, alpha: float,
             regime: Regime, cfg: TrainConfig, amplitude: float,
             robust_sample_size: int, seed: int) -> TrialRow:
    poisoned = inject_backdoor(train, t, alpha, amplitude,
                               seed=rng.generator(seed, 23).integers(1 << 62))
    row_seed = int(rng.generator(seed, 24, int(round(alpha * 1000)),
                                 1 if regime is Regime.PGD_AT else 0).integers(1 << 62))
    row_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                          step_size=cfg.step_size, seed=row_seed, pgd=cfg.pgd)
    model = _train(regime, poisoned, row_cfg)
    train01, train_rob = pgd_estimated_losses(
        model, poisoned.images, poisoned.labels, cfg, robust_sample_size,
        seed=row_seed + 1)
    test01, test_rob = pgd_estimated_losses(
        model, test.images, test.labels, cfg, robust_sample_size,
        seed=row_seed + 2)
    return TrialRow(alpha=alpha, regime=regime,
                    train_binary_loss=train01, train_robust_loss=train_rob,
                    test_binary_loss=test01, test_robust_loss=test_rob,
                    backdoor_success_rate=backdoor_success(model, test, t, amplitude))


def _thread_budget() -> int:
    raw = os.environ.get("BACKDOORLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_trial(train: ImageDataset, test: ImageDataset, t: int,
              alphas: list[float], cfg: TrainConfig,
              robust_sample_size: int = 5000, seed: int = 0,
              amplitude: float = 0.3) -> list[TrialRow]:
    """All (alpha, regime) rows, emitted in (alpha, regime) order.

    Rows train independently on derived seeds, so the sweep may run on
    several threads (BACKDOORLAB_THREADS); the output order and values
    do not depend on the thread count.
    """
    if any(not 0.0 <= a < 0.5 for a in alphas):
        raise ConfigError("alphas must lie in [0, 1/2)")
    if robust_sample_size > len(train):
        raise ConfigError("robust sample size exceeds the training set")
    cells = [(alpha, regime) for alpha in alphas
             for regime in (Regime.VANILLA, Regime.PGD_AT)]
    workers = min(_thread_budget(), len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda cell: _one_row(train, test, t, cell[0], cell[1], cfg,
                                      amplitude, robust_sample_size, seed),
                cells))
    else:
        rows = [_one_row(train, test, t, alpha, regime, cfg, amplitude,
                         robust_sample_size, seed)
                for alpha, regime in cells]
    return rows


def write_rows_csv(rows: list[TrialRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def write_manifest(path, seed: int, cfg: TrainConfig, train: ImageDataset,
                   test: ImageDataset, extra: dict | None = None) -> None:
    manifest = {
        "seed": seed,
        "cfg": cfg.to_json(),
        "datasetHashes": {
            "trainImages": _digest(train.images),
            "trainLabels": _digest(train.labels),
            "testImages": _digest(test.images),
            "testLabels": _digest(test.labels),
        },
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
