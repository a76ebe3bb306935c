"""Synthetic overparameterized linear threat instances.

Clean data lives on an s-dimensional subspace of R^d spanned by the
orthonormal columns of A.  The ground truth is an origin-containing
halfspace inside that subspace, every sampled point keeps l2 norm at
most R and absolute margin at least gamma, and the positive-class mass
is an explicit mixture weight so that class balance holds by
construction even for small samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng
from .core import TOL, LabeledDataset, _frozen
from .errors import ConfigError, SamplerError

_MAX_DRAW_ATTEMPTS = 100_000


@dataclass(frozen=True)
class ThreatInstance:
    """Geometry bundle: ambient dim d, subspace basis A (d x s), unit
    ground-truth weight vector in span(A), margin gamma, radius bound R,
    the mixture weight for the positive class, and the sampling seed."""

    d: int
    s: int
    A: np.ndarray
    w_star: np.ndarray
    gamma: float
    R: float
    seed: int
    balance: float = 0.5

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        w = np.asarray(self.w_star, dtype=np.float64)
        if A.shape != (self.d, self.s):
            raise ConfigError(f"A must be {self.d}x{self.s}, got {A.shape}")
        if np.abs(A.T @ A - np.eye(self.s)).max() > 1e-7:
            raise ConfigError("columns of A must be orthonormal")
        if abs(np.linalg.norm(w) - 1.0) > 1e-7:
            raise ConfigError("w_star must have unit norm")
        if np.linalg.norm(w - A @ (A.T @ w)) > 1e-7:
            raise ConfigError("w_star must lie in span(A)")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "w_star", _frozen(w))

    def to_json(self) -> dict:
        return {
            "d": self.d, "s": self.s, "gamma": self.gamma, "R": self.R,
            "seed": self.seed, "balance": self.balance,
            "wStar": self.w_star.tolist(), "A": self.A.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ThreatInstance":
        return cls(d=int(obj["d"]), s=int(obj["s"]),
                   A=np.asarray(obj["A"], dtype=np.float64),
                   w_star=np.asarray(obj["wStar"], dtype=np.float64),
                   gamma=float(obj["gamma"]), R=float(obj["R"]),
                   seed=int(obj["seed"]), balance=float(obj.get("balance", 0.5)))


def save_instance(inst: ThreatInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(inst.to_json(), fh, sort_keys=True)


def load_instance(path) -> ThreatInstance:
    with open(path) as fh:
        return ThreatInstance.from_json(json.load(fh))


def _basis_and_truth(d: int, s: int, g: np.random.Generator):
    # QR of a Gaussian matrix gives a rotation-invariant random basis.
    M = g.standard_normal((d, s))
    Q, _ = np.linalg.qr(M)
    u = g.standard_normal(s)
    u /= np.linalg.norm(u)
    return Q, Q @ u, u


def _draw_coords(inst_u: np.ndarray, gamma: float, R: float, side: int,
                 g: np.random.Generator) -> np.ndarray:
    """One subspace coordinate vector z with |z| <= R and side*<u,z> >= gamma."""
    s = inst_u.shape[0]
    scale = R / (3.0 * np.sqrt(s))
    for _ in range(_MAX_DRAW_ATTEMPTS):
        z = g.standard_normal(s) * scale
        m = float(inst_u @ z)
        if side * m < gamma:
            continue
        if np.linalg.norm(z) <= R:
            return z
    raise SamplerError("rejection sampling starved; margin is too close to R")


def sample_coords(inst: ThreatInstance, side: int, n: int,
                  g: np.random.Generator) -> np.ndarray:
    """n subspace coordinate vectors conditioned on the given label side."""
    u = inst.A.T @ inst.w_star
    return np.stack([_draw_coords(u, inst.gamma, inst.R, side, g)
                     for _ in range(n)])


def sample_points(inst: ThreatInstance, side: int, n: int,
                  g: np.random.Generator) -> np.ndarray:
    """n ambient points from the clean distribution conditioned on one class."""
    return sample_coords(inst, side, n, g) @ inst.A.T


def sample_labeled(inst: ThreatInstance, n: int, g: np.random.Generator) -> LabeledDataset:
    """n labeled clean points; label sides are iid Bernoulli(balance)."""
    sides = np.where(g.random(n) < inst.balance, 1, -1)
    X = np.empty((n, inst.d))
    u = inst.A.T @ inst.w_star
    for i in range(n):
        X[i] = inst.A @ _draw_coords(u, inst.gamma, inst.R, int(sides[i]), g)
    return LabeledDataset(X, sides, np.zeros(n, dtype=bool))


def sample_instance(d: int, s: int, gamma: float, R: float, n: int,
                    balance_target: float, seed: int) -> tuple[ThreatInstance, LabeledDataset]:
    """Build a fresh instance and n clean examples labeled by its ground truth.

    Deterministic given the seed.  Every example satisfies |x| <= R and
    |<w_star, x>| >= gamma; the positive side carries probability mass
    ``balance_target``.
    """
    if not 1 <= s < d:
        raise ConfigError(f"need 1 <= s < d, got s={s}, d={d}")
    if not 0 < gamma < R:
        raise ConfigError(f"need 0 < gamma < R, got gamma={gamma}, R={R}")
    if n < 2:
        raise ConfigError("need at least two samples")
    if not (1 / 50 <= balance_target <= 49 / 50):
        raise ConfigError("balance target must lie in [1/50, 49/50]")
    g = rng.generator(seed, 0)
    A, w_star, _ = _basis_and_truth(d, s, g)
    inst = ThreatInstance(d=d, s=s, A=A, w_star=w_star, gamma=float(gamma),
                          R=float(R), seed=int(seed), balance=float(balance_target))
    data = sample_labeled(inst, n, rng.generator(seed, 1))
    return inst, data
