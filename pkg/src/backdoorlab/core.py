"""Domain types shared by all modules, plus exact 0-1 and robust loss.

Conventions fixed here and relied on everywhere else:

* ``sign(0)`` predicts ``+1``.
* Robust correctness of a linear hypothesis against an additive norm
  ball is decided by the closed form ``y*<w,x> > radius * dual(w)``
  where ``dual`` is the l2 norm for an l2 ball and the l1 norm for an
  l-infinity ball.  Ties (equality) count as failures, because the
  supremum over a closed ball attains the boundary.
* All reals are float64; tolerance for geometric checks is 1e-9.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, EmptyDatasetError

TOL = 1e-9


class Origin(Enum):
    CLEAN = "clean"
    POISON = "poison"


class NormKind(Enum):
    L2 = "l2"
    LINF = "linf"


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledExample:
    """One (feature vector, label) pair with a provenance flag."""

    x: np.ndarray
    y: int
    origin: Origin = Origin.CLEAN

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(_as_vector(self.x)))
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True)
class LabeledDataset:
    """Ordered example collection stored as arrays.

    ``y`` holds -1/+1 for binary problems (``num_classes is None``) and
    class ids in ``[0, num_classes)`` otherwise.  ``is_poison`` carries
    the per-example provenance flag.
    """

    X: np.ndarray
    y: np.ndarray
    is_poison: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-d, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        y = np.asarray(self.y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise DimensionError("y must have one label per row of X")
        flags = np.asarray(self.is_poison, dtype=bool)
        if flags.shape != (X.shape[0],):
            raise DimensionError("is_poison must have one flag per row of X")
        if self.num_classes is None:
            if y.size and not np.all(np.isin(y, (-1, 1))):
                raise ValueError("binary labels must be -1 or +1")
        else:
            if self.num_classes < 2:
                raise ValueError("num_classes must be at least 2")
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValueError("class labels must lie in [0, num_classes)")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "is_poison", _frozen(flags))

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample],
                      num_classes: int | None = None) -> "LabeledDataset":
        if not examples:
            raise EmptyDatasetError("cannot build a dataset from zero examples")
        X = np.stack([e.x for e in examples])
        y = np.array([e.y for e in examples])
        flags = np.array([e.origin is Origin.POISON for e in examples])
        return cls(X, y, flags, num_classes)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self.example(i)

    def example(self, i: int) -> LabeledExample:
        origin = Origin.POISON if self.is_poison[i] else Origin.CLEAN
        return LabeledExample(self.X[i], int(self.y[i]), origin)

    def poison_fraction(self) -> float:
        if len(self) == 0:
            raise EmptyDatasetError("poison fraction of an empty dataset")
        return float(np.count_nonzero(self.is_poison)) / len(self)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices)
        return LabeledDataset(self.X[idx], self.y[idx], self.is_poison[idx],
                              self.num_classes)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if other.d != self.d:
            raise DimensionError("cannot concatenate datasets of different dimension")
        if other.num_classes != self.num_classes:
            raise ValueError("cannot concatenate datasets with different label kinds")
        return LabeledDataset(np.vstack([self.X, other.X]),
                              np.concatenate([self.y, other.y]),
                              np.concatenate([self.is_poison, other.is_poison]),
                              self.num_classes)


@dataclass(frozen=True)
class LinearHypothesis:
    """Origin-containing halfspace x -> sign(<w, x>), with sign(0) = +1."""

    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(_as_vector(self.w)))

    @property
    def d(self) -> int:
        return self.w.shape[0]

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise DimensionError(f"points have dimension {X.shape[1]}, hypothesis has {self.d}")
        return X @ self.w

    def predict(self, x) -> int:
        return 1 if float(np.dot(_as_vector(x), self.w)) >= 0.0 else -1

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.scores(X) >= 0.0, 1, -1)


@dataclass(frozen=True)
class PatchFunction:
    """Additive watermark x -> x + eta carrying its intended target label."""

    eta: np.ndarray
    target_label: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eta", _frozen(_as_vector(self.eta)))
        if self.target_label not in (-1, 1):
            raise ValueError("target label must be -1 or +1")
        object.__setattr__(self, "target_label", int(self.target_label))

    @classmethod
    def identity(cls, d: int, target_label: int = 1) -> "PatchFunction":
        return cls(np.zeros(d), target_label)

    @property
    def d(self) -> int:
        return self.eta.shape[0]

    def apply(self, x) -> np.ndarray:
        v = _as_vector(x)
        if v.shape[0] != self.d:
            raise DimensionError(f"point has dimension {v.shape[0]}, patch has {self.d}")
        return v + self.eta

    def apply_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.d:
            raise DimensionError(f"points have dimension {X.shape[1]}, patch has {self.d}")
        return X + self.eta

    def inverse(self) -> "PatchFunction":
        return PatchFunction(-self.eta, self.target_label)

    def to_json(self) -> dict:
        return {"eta": self.eta.tolist(), "target": self.target_label}

    @classmethod
    def from_json(cls, obj: dict) -> "PatchFunction":
        return cls(np.asarray(obj["eta"], dtype=np.float64), int(obj["target"]))


@dataclass(frozen=True)
class PerturbationSet:
    """Norm ball of additive perturbations generating the robust loss."""

    norm_kind: NormKind
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "radius", float(self.radius))

    def dual_norm(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=np.float64)
        if self.norm_kind is NormKind.L2:
            return float(np.linalg.norm(w, 2))
        return float(np.linalg.norm(w, 1))


def apply_patch(p: PatchFunction, x) -> np.ndarray:
    """Return x + p.eta; dimensions must match."""
    return p.apply(x)


def binary_loss(h: LinearHypothesis, S: LabeledDataset) -> float:
    """Fraction of examples with sign(<w,x>) != y, using sign(0) = +1."""
    if len(S) == 0:
        raise EmptyDatasetError("0-1 loss of an empty dataset")
    return float(np.mean(h.predict_many(S.X) != S.y))


def robust_margins(h: LinearHypothesis, S: LabeledDataset) -> np.ndarray:
    """Signed margins y*<w,x> for every example."""
    return S.y * h.scores(S.X)


def robust_loss(h: LinearHypothesis, S: LabeledDataset, P: PerturbationSet) -> float:
    """Exact worst-case 0-1 loss over the additive norm ball.

    Example (x, y) survives iff y*<w,x> > radius * dual(w); equality is
    a failure.  A zero weight vector therefore fails everywhere.
    """
    if len(S) == 0:
        raise EmptyDatasetError("robust loss of an empty dataset")
    threshold = P.radius * P.dual_norm(h.w)
    return float(np.mean(robust_margins(h, S) <= threshold))


def save_dataset_csv(S: LabeledDataset, path) -> None:
    """Write `y,x0,...,x{d-1},origin` rows; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{j}" for j in range(S.d)] + ["origin"])
        for i in range(len(S)):
            origin = Origin.POISON if S.is_poison[i] else Origin.CLEAN
            writer.writerow([int(S.y[i])] + [repr(float(v)) for v in S.X[i]]
                            + [origin.value])


def load_dataset_csv(path, num_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "y" or header[-1] != "origin":
            raise ValueError("expected header y,x0,...,origin")
        d = len(header) - 2
        ys, rows, flags = [], [], []
        for rec in reader:
            if len(rec) != d + 2:
                raise DimensionError("row width does not match header")
            ys.append(int(rec[0]))
            rows.append([float(v) for v in rec[1:-1]])
            flags.append(rec[-1] == Origin.POISON.value)
    if not rows:
        raise EmptyDatasetError(f"no rows in {path}")
    return LabeledDataset(np.array(rows), np.array(ys), np.array(flags), num_classes)
