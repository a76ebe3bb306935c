"""Brute-force memorization capacity and VC dimension on finite
instances, plus constructive memorization witnesses for two concrete
hypothesis families (bounded sign-change functions on [0,1] and
overparameterized halfspaces).

Memorization capacity here: the largest k for which k disjoint
zero-mass points admit every one of the 2^k labelings by hypotheses
that agree with the reference hypothesis on all positive-mass points.
Searching singletons is enough for existence: any family of
memorizable sets yields a memorizable singleton family of the same
cardinality by picking one point per set.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import rng
from .core import LinearHypothesis, PatchFunction, _frozen
from .errors import (ConfigError, NoOrthogonalComplementError,
                     SearchBudgetError, WitnessError)
from .synth import ThreatInstance

_MAX_POINTS = 16


@dataclass(frozen=True)
class FiniteProblem:
    """Explicit finite learning instance.

    ``labels`` is a (num_hypotheses, num_points) matrix of -1/+1 values;
    ``mass`` is a probability vector over the points (exact zeros mark
    irrelevant points); ``h_star_index`` selects the reference row.
    """

    points: np.ndarray
    mass: np.ndarray
    labels: np.ndarray
    h_star_index: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        mass = np.asarray(self.mass, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        n = pts.shape[0]
        if mass.shape != (n,) or np.any(mass < 0):
            raise ConfigError("mass must be a nonnegative vector over the points")
        if abs(mass.sum() - 1.0) > 1e-9:
            raise ConfigError("mass must sum to one")
        if labels.ndim != 2 or labels.shape[1] != n or labels.shape[0] == 0:
            raise ConfigError("labels must be a nonempty (hypotheses x points) matrix")
        if not np.all(np.isin(labels, (-1, 1))):
            raise ConfigError("hypothesis labels must be -1 or +1")
        if len({tuple(row) for row in labels.tolist()}) != labels.shape[0]:
            raise ConfigError("hypothesis rows must be deduplicated")
        if not 0 <= self.h_star_index < labels.shape[0]:
            raise ConfigError("h_star_index out of range")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "mass", _frozen(mass))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_json(cls, obj: dict) -> "FiniteProblem":
        return cls(points=np.asarray(obj["points"], dtype=np.float64),
                   mass=np.asarray(obj["mass"], dtype=np.float64),
                   labels=np.asarray(obj["hypotheses"], dtype=np.int64),
                   h_star_index=int(obj["hStarIndex"]))

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "mass": self.mass.tolist(),
                "hypotheses": self.labels.tolist(), "hStarIndex": self.h_star_index}


@dataclass(frozen=True)
class McapWitness:
    """k disjoint singleton sets plus one realizer per labeling.

    ``realizers`` maps each labeling tuple b in {-1,+1}^k to a
    hypothesis index (finite search) or to a constructed hypothesis
    object (constructive witnesses).
    """

    sets: tuple
    realizers: dict

    @property
    def k(self) -> int:
        return len(self.sets)


def _agreeing_rows(P: FiniteProblem) -> np.ndarray:
    """Indices of hypotheses matching h_star on every positive-mass point."""
    positive = P.mass > 0.0
    ref = P.labels[P.h_star_index]
    ok = np.all(P.labels[:, positive] == ref[positive], axis=1)
    return np.flatnonzero(ok)


def _shattered(labels: np.ndarray, cols) -> dict | None:
    """Return {labeling: row index} if `cols` take all 2^k patterns, else None."""
    seen: dict = {}
    sub = labels[:, list(cols)]
    for row_idx, pattern in enumerate(map(tuple, sub.tolist())):
        if pattern not in seen:
            seen[pattern] = row_idx
    if len(seen) == (1 << len(cols)):
        return seen
    return None


def brute_force_mcap(P: FiniteProblem, max_k: int) -> tuple[int, McapWitness | None]:
    """Largest k <= max_k of memorizable zero-mass singletons, with witness."""
    if P.n_points > _MAX_POINTS:
        raise SearchBudgetError(f"exhaustive search limited to {_MAX_POINTS} points")
    if max_k > P.n_points:
        raise SearchBudgetError("max_k cannot exceed the number of points")
    rows = _agreeing_rows(P)
    sub_labels = P.labels[rows]
    zero_mass = np.flatnonzero(P.mass == 0.0)
    top = min(max_k, zero_mass.size)
    for k in range(top, 0, -1):
        for combo in itertools.combinations(zero_mass.tolist(), k):
            found = _shattered(sub_labels, combo)
            if found is not None:
                realizers = {b: int(rows[r]) for b, r in found.items()}
                sets = tuple((int(c),) for c in combo)
                return k, McapWitness(sets=sets, realizers=realizers)
    return 0, None


def brute_force_vc(P: FiniteProblem) -> int:
    """Size of the largest subset of the points shattered by the hypothesis list."""
    if P.n_points > _MAX_POINTS:
        raise SearchBudgetError(f"exhaustive search limited to {_MAX_POINTS} points")
    vc = 0
    for k in range(1, P.n_points + 1):
        if (1 << k) > P.labels.shape[0]:
            break
        hit = False
        for combo in itertools.combinations(range(P.n_points), k):
            if _shattered(P.labels, combo) is not None:
                hit = True
                break
        if not hit:
            break
        vc = k
    return vc


def verify_mcap_witness(P: FiniteProblem, witness: McapWitness) -> bool:
    """Independent replay of the witness against the problem definition."""
    k = witness.k
    cols = [s[0] for s in witness.sets]
    if len(set(cols)) != k or any(P.mass[c] != 0.0 for c in cols):
        return False
    positive = np.flatnonzero(P.mass > 0.0)
    ref = P.labels[P.h_star_index]
    if len(witness.realizers) != (1 << k):
        return False
    for b, row in witness.realizers.items():
        lab = P.labels[row]
        if np.any(lab[positive] != ref[positive]):
            return False
        if tuple(lab[cols]) != tuple(b):
            return False
    return True


# ---------------------------------------------------------------------------
# sign-change functions on [0, 1]


@dataclass(frozen=True)
class PiecewiseSign:
    """Piecewise-constant -1/+1 function on [0,1].

    ``pieces`` is an ordered tuple of (lo, hi, sign) covering [0,1];
    degenerate pieces (lo == hi) encode single-point values and take
    precedence at their point.
    """

    pieces: tuple

    def __post_init__(self):
        if not self.pieces:
            raise WitnessError("function needs at least one piece")
        last_hi = 0.0
        for i, (lo, hi, sign) in enumerate(self.pieces):
            if sign not in (-1, 1) or lo > hi:
                raise WitnessError(f"bad piece {(lo, hi, sign)}")
            if i == 0 and lo != 0.0:
                raise WitnessError("pieces must start at 0")
            if i > 0 and lo != last_hi:
                raise WitnessError("pieces must tile [0,1] without gaps")
            last_hi = hi
        if last_hi != 1.0:
            raise WitnessError("pieces must end at 1")

    @classmethod
    def alternating(cls, changes: int, first_sign: int = 1) -> "PiecewiseSign":
        """Equal-width function with exactly the given number of sign changes."""
        m = changes + 1
        cuts = np.linspace(0.0, 1.0, m + 1)
        sign = first_sign
        pieces = []
        for i in range(m):
            pieces.append((float(cuts[i]), float(cuts[i + 1]), sign))
            sign = -sign
        return cls(tuple(pieces))

    def __call__(self, x: float) -> int:
        hit = None
        for lo, hi, sign in self.pieces:
            if lo == hi == x:
                return sign
            if lo <= x <= hi and hit is None:
                hit = sign
        if hit is None:
            raise WitnessError(f"point {x} outside [0,1]")
        return hit

    def sign_changes(self) -> int:
        signs = [s for (_, _, s) in self.pieces]
        return sum(1 for a, b in zip(signs, signs[1:]) if a != b)

    def flip_points(self, points: tuple[float, ...]) -> "PiecewiseSign":
        """Flip the value at each given point via degenerate pieces."""
        pieces = list(self.pieces)
        for p in sorted(points):
            out = []
            for lo, hi, sign in pieces:
                if lo < p < hi:
                    out.extend([(lo, p, sign), (p, p, -sign), (p, hi, sign)])
                else:
                    out.append((lo, hi, sign))
            pieces = out
        return PiecewiseSign(tuple(pieces))


def sign_changes_mcap_witness(d: int, s: int, h_star: PiecewiseSign,
                              points: list[float]) -> McapWitness:
    """Memorize floor((d-s)/2) points atop an s-change function inside
    the d-change class: each disagreeing point is flipped in place,
    which adds exactly two sign changes, so every realizer stays within
    d changes while matching h_star everywhere else."""
    if s > d:
        raise ConfigError("need s <= d")
    if h_star.sign_changes() != s:
        raise WitnessError(f"reference function must have exactly {s} sign changes")
    k = (d - s) // 2
    if len(points) != k:
        raise WitnessError(f"expected exactly {k} points, got {len(points)}")
    if len(set(points)) != len(points):
        raise WitnessError("points must be distinct")
    for p in points:
        inside = any(lo < p < hi for lo, hi, _ in h_star.pieces)
        if not inside:
            raise WitnessError(f"point {p} is not interior to any interval")
    pts = tuple(float(p) for p in points)
    realizers = {}
    for b in itertools.product((-1, 1), repeat=k):
        flips = tuple(p for p, want in zip(pts, b) if h_star(p) != want)
        f = h_star.flip_points(flips) if flips else h_star
        if f.sign_changes() > d:
            raise WitnessError("realizer exceeded the sign-change budget")
        realizers[b] = f
    return McapWitness(sets=tuple((p,) for p in pts), realizers=realizers)


def verify_sign_witness(d: int, h_star: PiecewiseSign, witness: McapWitness,
                        grid: int = 512) -> bool:
    """Replay the witness: budget, labelings, and off-point agreement."""
    pts = [s[0] for s in witness.sets]
    xs = [x for x in np.linspace(0.0, 1.0, grid) if x not in pts]
    for b, f in witness.realizers.items():
        if f.sign_changes() > d:
            return False
        if any(f(p) != want for p, want in zip(pts, b)):
            return False
        if any(f(x) != h_star(x) for x in xs):
            return False
    return True


# ---------------------------------------------------------------------------
# overparameterized halfspaces


@dataclass(frozen=True)
class LinearMemorizationWitness:
    """Single weight vector memorizing k orthocomplement watermark
    populations while matching the ground truth on the data subspace."""

    w_hat: LinearHypothesis
    patches: tuple


def orthocomplement_directions(inst: ThreatInstance, k: int,
                               seed: int = 0) -> np.ndarray:
    """k orthonormal directions orthogonal to span(A), deterministic by seed."""
    if k > inst.d - inst.s:
        raise NoOrthogonalComplementError(
            f"requested {k} directions but the complement has dimension {inst.d - inst.s}")
    g = rng.generator(seed, 91)
    M = g.standard_normal((inst.d, k))
    M -= inst.A @ (inst.A.T @ M)
    Q, _ = np.linalg.qr(M)
    return Q[:, :k].T


def linear_overparam_witness(inst: ThreatInstance, targets: list[int],
                             magnitudes: list[float],
                             seed: int = 0) -> LinearMemorizationWitness:
    """Explicit halfspace that stays correct on the data subspace and
    sends the i-th watermark population to its target label.

    The construction adds (2R/gamma) * t_i / magnitude_i of each
    complement direction to the ground-truth weights, which dominates
    any in-subspace score (|<w*, x>| <= R) on patched points while
    vanishing on clean ones.
    """
    k = len(targets)
    if len(magnitudes) != k:
        raise ConfigError("targets and magnitudes must have equal length")
    if any(t not in (-1, 1) for t in targets):
        raise ConfigError("targets must be -1 or +1")
    if any(m <= 0 for m in magnitudes):
        raise ConfigError("magnitudes must be positive")
    dirs = orthocomplement_directions(inst, k, seed)
    boost = 2.0 * inst.R / inst.gamma
    w = inst.w_star.copy()
    patches = []
    for t, mag, v in zip(targets, magnitudes, dirs):
        w = w + boost * (t / mag) * v
        patches.append(PatchFunction(mag * v, t))
    return LinearMemorizationWitness(w_hat=LinearHypothesis(w),
                                     patches=tuple(patches))


def load_finite_problem(path) -> FiniteProblem:
    with open(path) as fh:
        return FiniteProblem.from_json(json.load(fh))
