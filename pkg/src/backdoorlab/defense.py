"""Training-set defenses built on exact robust loss.

``certify`` turns robust ERM into an accept/reject gate at threshold
2*epsilon.  ``filter_then_generalize`` retrains robustly on a filtered
subset.  ``generalize_to_filter`` converts any robust learner into a
filter: split the set in half, train on each half, and delete every
example the opposite half's hypothesis misclassifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from . import rng
from .core import LabeledDataset, LinearHypothesis, PerturbationSet, robust_loss
from .errors import ConfigError, EmptyDatasetError
from .learner import robust_erm_halfspace

Generalizer = Callable[[LabeledDataset], LinearHypothesis]
Filter = Callable[[LabeledDataset], LabeledDataset]


class Verdict(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class CertifyOutcome:
    verdict: Verdict
    training_robust_loss: float
    hypothesis: LinearHypothesis | None

    def __post_init__(self):
        if self.verdict is Verdict.ACCEPT and self.hypothesis is None:
            raise ValueError("accepting verdict must carry the hypothesis")

    def to_json(self) -> dict:
        out = {"verdict": self.verdict.value,
               "trainingRobustLoss": self.training_robust_loss}
        if self.hypothesis is not None:
            out["w"] = self.hypothesis.w.tolist()
        return out


@dataclass(frozen=True)
class FilterOutcome:
    kept: LabeledDataset
    removed_clean_count: int
    removed_poison_count: int
    early_return: bool = False

    def to_json(self) -> dict:
        return {"kept": len(self.kept),
                "removedClean": self.removed_clean_count,
                "removedPoison": self.removed_poison_count,
                "earlyReturn": self.early_return}


def certify(S: LabeledDataset, P: PerturbationSet, epsilon: float,
            solver: Generalizer | None = None,
            seed: int = 0) -> CertifyOutcome:
    """Accept a robustly trained hypothesis iff its exact robust
    training loss is at most 2*epsilon; otherwise declare the set
    corrupted."""
    if not 0 < epsilon < 0.5:
        raise ConfigError("epsilon must lie in (0, 1/2)")
    if solver is None:
        h = robust_erm_halfspace(S, P, seed=seed)
    else:
        h = solver(S)
    loss = robust_loss(h, S, P)
    if loss <= 2.0 * epsilon:
        return CertifyOutcome(Verdict.ACCEPT, loss, h)
    return CertifyOutcome(Verdict.REJECT, loss, None)


def filter_then_generalize(S: LabeledDataset, P: PerturbationSet,
                           filter_fn: Filter,
                           seed: int = 0) -> LinearHypothesis:
    """Run the filtering procedure and robustly retrain on the survivors."""
    kept = filter_fn(S)
    if len(kept) == 0:
        raise EmptyDatasetError("filter removed every example")
    return robust_erm_halfspace(kept, P, seed=seed)


def split_in_half(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform partition into halves whose sizes differ by at most one."""
    order = rng.generator(seed, 51).permutation(n)
    return order[: n // 2], order[n // 2:]


def generalize_to_filter(S: LabeledDataset, P: PerturbationSet,
                         generalizer: Generalizer, epsilon: float,
                         C: float = 2.0, seed: int = 0) -> FilterOutcome:
    """Filter by cross-marking mistakes of half-trained hypotheses.

    If robust ERM already achieves exact robust loss <= C*epsilon on the
    full set, the set is returned unchanged.  Otherwise the set is split
    into two seeded halves, the generalizer is trained on each, and an
    example is deleted iff the hypothesis trained on the opposite half
    misclassifies it (plain 0-1 mistake against the recorded label).
    """
    if epsilon <= 0 or epsilon > 0.1:
        raise ConfigError("epsilon must lie in (0, 1/10]")
    if len(S) < 2:
        raise EmptyDatasetError("need at least two examples to partition")
    h0 = robust_erm_halfspace(S, P, seed=seed)
    if robust_loss(h0, S, P) <= C * epsilon:
        return FilterOutcome(kept=S, removed_clean_count=0,
                             removed_poison_count=0, early_return=True)
    left, right = split_in_half(len(S), seed)
    h_left = generalizer(S.subset(left))
    h_right = generalizer(S.subset(right))
    mark = np.zeros(len(S), dtype=bool)
    mark[right] = h_left.predict_many(S.X[right]) != S.y[right]
    mark[left] = h_right.predict_many(S.X[left]) != S.y[left]
    removed_poison = int(np.count_nonzero(mark & S.is_poison))
    removed_clean = int(np.count_nonzero(mark & ~S.is_poison))
    kept = S.subset(np.flatnonzero(~mark))
    return FilterOutcome(kept=kept, removed_clean_count=removed_clean,
                         removed_poison_count=removed_poison, early_return=False)
